#pragma once

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bicd/harness.hpp"

namespace bicd::cli {

enum ExitCode : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// A usage problem detected after parsing (contradictory or missing flags).
struct UsageError : Error {
    using Error::Error;
};

namespace detail {

inline json load_json_file(const fs::path& p) {
    try {
        return json::parse(read_file(p));
    } catch (const json::exception& e) {
        throw ConfigError("malformed config file " + p.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_file(p, j.dump(2) + "\n");
}

inline fs::path checkpoint_path(const fs::path& model) {
    return fs::is_directory(model) ? model / "model.ckpt" : model;
}

/// Training flags shared by `train` and `ablate`. Flags given on the command
/// line override the config file.
struct TrainFlags {
    std::string config;
    std::uint64_t seed = 0;
    std::size_t epochs = 0, batch_size = 0, hidden = 0, hidden_att = 0, patience = 0;
    double lr = 0, beta = 0, p0 = 0, dropout = 0, tau_start = 0, tau_end = 0, rank_tol = 0;
    std::string variant, omega_mode;
    std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> setters;

    void attach(CLI::App* app, bool with_variant) {
        app->add_option("--config", config, "JSON file with train config fields")->check(CLI::ExistingFile);
        auto add = [&](const char* flag, auto& field, auto apply, const char* help) {
            CLI::Option* o = app->add_option(flag, field, help);
            setters.emplace_back(o, apply);
        };
        add("--seed", seed, [this](TrainConfig& c) { c.seed = seed; }, "training seed");
        add("--epochs", epochs, [this](TrainConfig& c) { c.epochs = epochs; }, "training epochs");
        add("--batch-size", batch_size, [this](TrainConfig& c) { c.batch_size = batch_size; }, "samples per step");
        add("--hidden", hidden, [this](TrainConfig& c) { c.hidden = hidden; }, "hidden width H");
        add("--hidden-att", hidden_att, [this](TrainConfig& c) { c.hidden_att = hidden_att; }, "attention width");
        add("--patience", patience, [this](TrainConfig& c) { c.patience = patience; }, "early-stop patience, 0 = off");
        add("--lr", lr, [this](TrainConfig& c) { c.lr = lr; }, "Adam learning rate");
        add("--beta", beta, [this](TrainConfig& c) { c.beta = beta; }, "KL weight");
        add("--p0", p0, [this](TrainConfig& c) { c.p0 = p0; }, "gate prior");
        add("--dropout", dropout, [this](TrainConfig& c) { c.dropout = dropout; }, "dropout rate");
        add("--tau-start", tau_start, [this](TrainConfig& c) { c.tau_start = tau_start; }, "initial temperature");
        add("--tau-end", tau_end, [this](TrainConfig& c) { c.tau_end = tau_end; }, "final temperature");
        add("--rank-tol", rank_tol, [this](TrainConfig& c) { c.rank_tol = rank_tol; }, "relative rank tolerance");
        add("--omega-mode", omega_mode, [this](TrainConfig& c) { c.omega_mode = parse_omega_mode(omega_mode); },
            "rank or norm");
        if (with_variant)
            add("--variant", variant, [this](TrainConfig& c) { c.variant = parse_variant(variant); },
                "none, no-omega, no-z or no-c");
    }

    TrainConfig resolve() const {
        TrainConfig c;
        if (!config.empty()) overlay_json(c, load_json_file(config));
        for (const auto& [opt, apply] : setters)
            if (opt->count() > 0) apply(c);
        c.validate();
        return c;
    }
};

inline std::vector<std::size_t> parse_triple(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(part, &used);
            if (used != part.size() || v <= 0) throw std::invalid_argument(part);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw UsageError("--skeletons expects three positive integers T,V,E, got '" + s + "'");
        }
    }
    if (out.size() != 3) throw UsageError("--skeletons expects three positive integers T,V,E, got '" + s + "'");
    return out;
}

}  // namespace detail

/// Runs one CLI invocation. Returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"bicd: causal discovery with causal-strength latents and confounder disentanglement"};
    app.require_subcommand(1);
    std::size_t workers = 0;
    app.add_option("--workers", workers, "worker threads (default: $BICD_WORKERS or 1)");

    // gen
    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string g_preset, g_out, g_config, g_skeletons;
    std::uint64_t g_seed = 0;
    double g_scale = 1.0, g_perv = 0, g_sigma = 0, g_degree = 0;
    std::size_t g_nodes = 0, g_conf = 0, g_samples = 0, g_dim = 0;
    gen->add_option("--preset", g_preset, "syn1 .. syn9");
    gen->add_option("--seed", g_seed, "generator seed");
    gen->add_option("--out", g_out, "output directory")->required();
    gen->add_option("--config", g_config, "JSON file with generation fields")->check(CLI::ExistingFile);
    gen->add_option("--scale", g_scale, "skeleton-count scale factor");
    CLI::Option* o_nodes = gen->add_option("--nodes", g_nodes, "observed nodes N");
    CLI::Option* o_conf = gen->add_option("--confounders", g_conf, "latent confounders K");
    CLI::Option* o_perv = gen->add_option("--pervasiveness", g_perv, "confounder edge probability P");
    CLI::Option* o_samples = gen->add_option("--samples-per-skeleton", g_samples, "samples per skeleton n");
    CLI::Option* o_skel = gen->add_option("--skeletons", g_skeletons, "train,valid,test skeleton counts");
    CLI::Option* o_dim = gen->add_option("--dim", g_dim, "representation dimension D");
    CLI::Option* o_sigma = gen->add_option("--sigma", g_sigma, "noise standard deviation");
    CLI::Option* o_degree = gen->add_option("--expected-degree", g_degree, "expected neighbourhood size");

    // train
    CLI::App* tr = app.add_subcommand("train", "train a model");
    std::string t_data, t_out;
    tr->add_option("--data", t_data, "dataset directory")->required();
    tr->add_option("--out", t_out, "run directory")->required();
    detail::TrainFlags t_flags;
    t_flags.attach(tr, true);

    // eval
    CLI::App* ev = app.add_subcommand("eval", "evaluate a trained model");
    std::string e_data, e_model, e_split = "test", e_report;
    ev->add_option("--data", e_data, "dataset directory")->required();
    ev->add_option("--model", e_model, "run directory or checkpoint file")->required();
    ev->add_option("--split", e_split, "train, valid or test");
    ev->add_option("--report", e_report, "report path (default: <run>/report.json)");

    // ablate
    CLI::App* ab = app.add_subcommand("ablate", "train and evaluate all four variants");
    std::string a_data, a_out, a_split = "test";
    ab->add_option("--data", a_data, "dataset directory")->required();
    ab->add_option("--out", a_out, "output directory")->required();
    ab->add_option("--split", a_split, "evaluation split");
    detail::TrainFlags a_flags;
    a_flags.attach(ab, false);

    // dump
    CLI::App* du = app.add_subcommand("dump", "write per-sample CSV dumps");
    std::string d_data, d_model, d_split = "test", d_what = "edges", d_out;
    du->add_option("--data", d_data, "dataset directory")->required();
    du->add_option("--model", d_model, "run directory or checkpoint file")->required();
    du->add_option("--split", d_split, "train, valid or test");
    du->add_option("--what", d_what, "comma list of xhat, e, c, l, edges");
    du->add_option("--out", d_out, "output directory")->required();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return usage;
    }

    try {
        const std::size_t nworkers = workers > 0 ? workers : default_workers();

        if (*gen) {
            GenConfig cfg;
            const std::vector<CLI::Option*> ingredients{o_nodes, o_conf, o_perv, o_samples, o_skel};
            json file = g_config.empty() ? json::object() : detail::load_json_file(g_config);
            if (!g_preset.empty()) {
                for (CLI::Option* o : ingredients)
                    if (o->count() > 0)
                        throw UsageError("--preset " + g_preset + " conflicts with explicit ingredient " + o->get_name());
                for (const char* key : {"n_nodes", "n_confounders", "pervasiveness", "samples_per_skeleton",
                                        "train_skeletons", "valid_skeletons", "test_skeletons"})
                    if (file.contains(key))
                        throw UsageError("--preset " + g_preset + " conflicts with config key " + std::string(key));
                cfg = preset_config(g_preset, g_scale);
            }
            overlay_json(cfg, file);
            if (o_nodes->count()) cfg.n_nodes = g_nodes;
            if (o_conf->count()) cfg.n_confounders = g_conf;
            if (o_perv->count()) cfg.pervasiveness = g_perv;
            if (o_samples->count()) cfg.samples_per_skeleton = g_samples;
            if (o_skel->count()) {
                const auto t = detail::parse_triple(g_skeletons);
                cfg.train_skeletons = t[0];
                cfg.valid_skeletons = t[1];
                cfg.test_skeletons = t[2];
            }
            if (g_preset.empty() && g_scale != 1.0) {
                cfg.train_skeletons = scaled_count(cfg.train_skeletons, g_scale);
                cfg.valid_skeletons = scaled_count(cfg.valid_skeletons, g_scale);
                cfg.test_skeletons = scaled_count(cfg.test_skeletons, g_scale);
            }
            if (o_dim->count()) cfg.dim = g_dim;
            if (o_sigma->count()) cfg.noise_sigma = g_sigma;
            if (o_degree->count()) cfg.expected_degree = g_degree;
            cfg.validate();

            const fs::path dir(g_out);
            const std::string name = g_preset.empty() ? "custom" : g_preset;
            DatasetBundle b = generate_dataset(cfg, g_seed, name, g_preset, nworkers);
            write_dataset(b, dir);
            detail::write_json(dir / "resolved_config.json",
                               {{"command", "gen"},
                                {"preset", g_preset},
                                {"seed", g_seed},
                                {"scale", g_scale},
                                {"generation", to_json(cfg)},
                                {"dataset_manifest_crc32", manifest_hash(dir)}});
            out << "wrote " << b.skeletons.size() << " skeletons to " << dir.string() << " (manifest "
                << manifest_hash(dir) << ")\n";
            return ok;
        }

        if (*tr) {
            TrainConfig cfg = t_flags.resolve();
            const DatasetBundle data = read_dataset(t_data);
            const fs::path dir(t_out);
            fs::create_directories(dir);
            const std::string mhash = manifest_hash(t_data);
            json resolved{{"command", "train"},
                          {"data", t_data},
                          {"dataset_manifest_crc32", mhash},
                          {"train", to_json(cfg)},
                          {"model", to_json(cfg.model_config(data.dim()))}};
            detail::write_json(dir / "resolved_config.json", resolved);
            TrainResult r = train(
                cfg, data,
                [&](const EpochLog& e) {
                    out << "epoch " << e.epoch << " tau " << e.tau << " train_loss " << e.train_loss << " valid_auroc "
                        << e.valid_auroc << "\n";
                },
                nworkers);
            r.checkpoint.extra["dataset_manifest_crc32"] = mhash;
            r.checkpoint.extra["train_wall_seconds"] = r.wall_seconds;
            r.checkpoint.extra["train_config"] = to_json(cfg);
            save_checkpoint(r.checkpoint, dir / "model.ckpt");
            json log = json::array();
            for (const auto& e : r.log) log.push_back(to_json(e));
            detail::write_json(dir / "train_log.json", {{"epochs", log},
                                                        {"initial_objective", r.initial_objective},
                                                        {"final_objective", r.final_objective},
                                                        {"best_epoch", r.best_epoch},
                                                        {"wall_clock_seconds", r.wall_seconds}});
            out << "saved " << (dir / "model.ckpt").string() << "\n";
            return ok;
        }

        if (*ev) {
            const Split split = parse_split(e_split);
            const fs::path ckpath = detail::checkpoint_path(e_model);
            const Checkpoint ck = load_checkpoint(ckpath);
            const DatasetBundle data = read_dataset(e_data);
            const Metrics m = evaluate(ck, data, split, nworkers);
            const json config{{"command", "eval"},
                              {"data", e_data},
                              {"model", ckpath.string()},
                              {"split", e_split},
                              {"model_config", to_json(ck.model)},
                              {"variant", variant_name(ck.variant)},
                              {"train", ck.extra.value("train_config", json::object())}};
            const std::uint64_t seed = ck.extra.value("seed", std::uint64_t{0});
            const double wall = ck.extra.value("train_wall_seconds", 0.0);
            const fs::path report = e_report.empty() ? ckpath.parent_path() / "report.json" : fs::path(e_report);
            detail::write_json(report, make_report(m, split, config, seed, manifest_hash(e_data), wall));
            out << "auroc " << m.auroc << " mse_c " << (m.mse_c ? std::to_string(*m.mse_c) : "n/a") << " recon_mse "
                << m.recon_mse << "\n";
            return ok;
        }

        if (*ab) {
            const Split split = parse_split(a_split);
            TrainConfig cfg = a_flags.resolve();
            const DatasetBundle data = read_dataset(a_data);
            const fs::path dir(a_out);
            fs::create_directories(dir);
            const std::string mhash = manifest_hash(a_data);
            detail::write_json(dir / "resolved_config.json", {{"command", "ablate"},
                                                              {"data", a_data},
                                                              {"split", a_split},
                                                              {"dataset_manifest_crc32", mhash},
                                                              {"train", to_json(cfg)}});
            auto rows = run_ablation(cfg, data, split, nworkers);
            detail::write_json(dir / "ablation.json", {{"split", a_split},
                                                       {"seed", cfg.seed},
                                                       {"dataset_manifest_crc32", mhash},
                                                       {"rows", ablation_table(rows)}});
            for (const auto& r : rows)
                out << variant_name(r.variant) << " auroc " << r.metrics.auroc << "\n";
            return ok;
        }

        if (*du) {
            const Split split = parse_split(d_split);
            const auto tags = parse_dump_tags(d_what);
            const fs::path ckpath = detail::checkpoint_path(d_model);
            const Checkpoint ck = load_checkpoint(ckpath);
            const DatasetBundle data = read_dataset(d_data);
            dump_representations(ck, data, split, tags, d_out, nworkers);
            detail::write_json(fs::path(d_out) / "resolved_config.json", {{"command", "dump"},
                                                                          {"data", d_data},
                                                                          {"model", ckpath.string()},
                                                                          {"split", d_split},
                                                                          {"what", tags},
                                                                          {"dataset_manifest_crc32", manifest_hash(d_data)}});
            out << "dumped " << d_what << " to " << d_out << "\n";
            return ok;
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return usage;
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << "\n";
        return usage;
    } catch (const json::exception& e) {
        err << "usage error: bad config value: " << e.what() << "\n";
        return usage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return data;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return data;
    } catch (const Error& e) {
        err << "numeric failure: " << e.what() << "\n";
        return numeric;
    }
    return usage;
}

}  // namespace bicd::cli
