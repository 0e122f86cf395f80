#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <vector>

#include "bicd/checkpoint.hpp"
#include "bicd/parallel.hpp"
#include "bicd/dataset_io.hpp"
#include "bicd/model.hpp"

namespace bicd {

struct TrainConfig {
    std::size_t epochs = 100;
    double lr = 1e-3;
    double beta = 1.0;
    double p0 = 0.3;
    double tau_start = 1.0;
    double tau_end = 0.3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    Variant variant = Variant::full;
    OmegaMode omega_mode = OmegaMode::rank;
    double rank_tol = 1e-2;
    double dropout = 0.1;
    std::size_t hidden = 64;
    std::size_t hidden_att = 16;
    /// Early stopping on valid AUROC; 0 disables it.
    std::size_t patience = 0;

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (!(tau_start > 0.0 && tau_end > 0.0 && tau_end <= tau_start))
            throw ConfigError("temperatures must satisfy 0 < tau_end <= tau_start");
        model_config(1).validate();
    }

    ModelConfig model_config(std::size_t dim) const {
        ModelConfig m;
        m.dim = dim;
        m.hidden = hidden;
        m.hidden_att = hidden_att;
        m.dropout = dropout;
        m.p0 = p0;
        m.beta = beta;
        m.omega_mode = omega_mode;
        m.rank_tol = rank_tol;
        return m;
    }

    /// Geometric anneal from tau_start at the first epoch to tau_end at the last.
    double tau(std::size_t epoch) const {
        if (epochs <= 1) return tau_start;
        const double f = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
        return tau_start * std::pow(tau_end / tau_start, f);
    }
};

inline json to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},         {"lr", c.lr},
                {"beta", c.beta},             {"p0", c.p0},
                {"tau_start", c.tau_start},   {"tau_end", c.tau_end},
                {"batch_size", c.batch_size}, {"seed", c.seed},
                {"variant", variant_name(c.variant)}, {"omega_mode", omega_mode_name(c.omega_mode)},
                {"rank_tol", c.rank_tol},     {"dropout", c.dropout},
                {"hidden", c.hidden},         {"hidden_att", c.hidden_att},
                {"patience", c.patience}};
}

inline void overlay_json(TrainConfig& c, const json& j) {
    for (const auto& [key, v] : j.items()) {
        if (key == "epochs") c.epochs = v.get<std::size_t>();
        else if (key == "lr") c.lr = v.get<double>();
        else if (key == "beta") c.beta = v.get<double>();
        else if (key == "p0") c.p0 = v.get<double>();
        else if (key == "tau_start") c.tau_start = v.get<double>();
        else if (key == "tau_end") c.tau_end = v.get<double>();
        else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "variant") c.variant = parse_variant(v.get<std::string>());
        else if (key == "omega_mode") c.omega_mode = parse_omega_mode(v.get<std::string>());
        else if (key == "rank_tol") c.rank_tol = v.get<double>();
        else if (key == "dropout") c.dropout = v.get<double>();
        else if (key == "hidden") c.hidden = v.get<std::size_t>();
        else if (key == "hidden_att") c.hidden_att = v.get<std::size_t>();
        else if (key == "patience") c.patience = v.get<std::size_t>();
        else throw ConfigError("unknown train config key '" + key + "'");
    }
}

// ---------------------------------------------------------------------------
// Metrics

/// Mann-Whitney AUROC: P(random positive outranks random negative), ties 1/2.
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size())
        throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) +
                             " labels");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (std::isnan(scores[i])) throw NumericError("auroc: NaN score at index " + std::to_string(i));
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) {
                pos_rank_sum += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DomainError("auroc is undefined: labels contain a single class");
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct SkeletonScore {
    std::size_t id;
    std::optional<double> auroc;  // empty when the skeleton has no edges or is complete
};

struct Metrics {
    double auroc = 0.5;
    std::optional<double> mse_c;  // empty when the variant has no estimator
    double recon_mse = 0.0;
    double mean_omega = 0.0;
    std::size_t n_samples = 0;
    std::size_t n_pooled_edges = 0;
    std::vector<SkeletonScore> per_skeleton;
};

inline json to_json(const Metrics& m) {
    json per = json::array();
    for (const auto& s : m.per_skeleton)
        per.push_back({{"skeleton", s.id}, {"auroc", s.auroc ? json(*s.auroc) : json(nullptr)}});
    return json{{"auroc", m.auroc},
                {"mse_c", m.mse_c ? json(*m.mse_c) : json(nullptr)},
                {"recon_mse", m.recon_mse},
                {"mean_omega", m.mean_omega},
                {"n_samples", m.n_samples},
                {"n_pooled_edges", m.n_pooled_edges},
                {"per_skeleton_auroc", per}};
}

/// Default worker count from BICD_WORKERS, else 1.
inline std::size_t default_workers() {
    if (const char* env = std::getenv("BICD_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
        throw ConfigError(std::string("BICD_WORKERS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

// ---------------------------------------------------------------------------
// Evaluation

/// One skeleton's samples divided by their common RMS. A linear SEM stays a
/// linear SEM with the same adjacency under a global rescale, and C scales
/// with X, so predictions map back to raw units by multiplying by `scale`.
struct ScaledSkeleton {
    std::vector<Tensor> x;
    double scale = 1.0;
};

inline ScaledSkeleton scale_skeleton(const std::vector<SampleRecord>& recs) {
    if (recs.empty()) throw DataError("skeleton has no samples");
    double ss = 0.0;
    std::size_t count = 0;
    for (const auto& r : recs) {
        for (double v : r.x.storage()) ss += v * v;
        count += r.x.size();
    }
    ScaledSkeleton out;
    const double rms = count ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
    out.scale = rms > 0.0 ? rms : 1.0;
    for (const auto& r : recs) {
        Tensor t = r.x;
        for (auto& v : t.storage()) v /= out.scale;
        out.x.push_back(std::move(t));
    }
    return out;
}

/// ||C_pred - C_true||^2 / (N D) for one sample.
inline double confounding_mse(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape())
        throw DimensionError("confounding_mse: " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
    double se = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) se += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return se / static_cast<double>(pred.size());
}

/// Per-sample evaluation outputs for one skeleton (mean gates, no noise).
struct SkeletonEval {
    Tensor edge_prob;  // N x N
    std::vector<Tensor> xhat, e, c, l;
    std::vector<double> omega, recon, mse_c;
};

inline SkeletonEval evaluate_skeleton(const Checkpoint& ck, const std::vector<SampleRecord>& recs) {
    Tape tape;
    ModelParams params = ck.params;
    ParamVars pv = bind_params(tape, params, false);
    const ScaledSkeleton sk = scale_skeleton(recs);
    RngStream unused(0, 0);
    Posterior post = encode(tape, pv, sk.x, ck.model, false, unused);
    SkeletonEval out;
    out.edge_prob = post.prob.value();
    auto raw = [&](Tensor t) {
        for (auto& v : t.storage()) v *= sk.scale;
        return t;
    };
    for (std::size_t s = 0; s < recs.size(); ++s) {
        const auto& r = recs[s];
        ForwardOutputs f = forward_sample(tape, sk.x[s], post, pv, ck.model, {ck.variant, 1.0, false}, unused);
        out.xhat.push_back(raw(f.xhat.value()));
        out.e.push_back(f.e.value());
        out.l.push_back(f.l ? f.l->value() : Tensor(r.x.shape()));
        out.c.push_back(f.c ? raw(f.c->value()) : Tensor(r.x.shape()));
        out.omega.push_back(f.omega);
        out.recon.push_back(f.loss.l_rc.value()[0]);
        if (f.c) out.mse_c.push_back(confounding_mse(out.c.back(), r.c_true));
    }
    return out;
}

inline const std::vector<std::size_t>& nonempty_split(const DatasetBundle& data, Split split) {
    const auto& ids = data.manifest.split_ids(split);
    if (ids.empty()) throw ConfigError(std::string("split '") + split_name(split) + "' is empty");
    return ids;
}

/// Pooled AUROC of mean gate probabilities over every split sample's
/// strictly-lower entries, plus per-skeleton AUROC, MSE of C and
/// reconstruction error. Never modifies the checkpoint.
inline Metrics evaluate(const Checkpoint& ck, const DatasetBundle& data, Split split, std::size_t workers = 1) {
    const auto& ids = nonempty_split(data, split);
    if (ck.model.dim != data.dim())
        throw ConfigError("checkpoint dimension " + std::to_string(ck.model.dim) + " does not match dataset D " +
                          std::to_string(data.dim()));
    std::vector<SkeletonEval> evals(ids.size());
    parallel_for(ids.size(), workers, [&](std::size_t k) { evals[k] = evaluate_skeleton(ck, data.samples.at(ids[k])); });

    Metrics m;
    std::vector<double> scores;
    std::vector<bool> labels;
    double mse_sum = 0.0, recon_sum = 0.0, omega_sum = 0.0;
    std::size_t mse_count = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& spec = data.skeletons.at(ids[k]);
        const auto& ev = evals[k];
        std::vector<double> sk_scores;
        std::vector<bool> sk_labels;
        for (std::size_t i = 0; i < spec.n_nodes; ++i)
            for (std::size_t j = 0; j < i; ++j) {
                sk_scores.push_back(ev.edge_prob(i, j));
                sk_labels.push_back(spec.adjacency(i, j) != 0.0);
            }
        const auto n_true = static_cast<std::size_t>(std::count(sk_labels.begin(), sk_labels.end(), true));
        const bool mixed = n_true > 0 && n_true < sk_labels.size();
        m.per_skeleton.push_back({ids[k], mixed ? std::optional<double>(auroc(sk_scores, sk_labels)) : std::nullopt});
        for (std::size_t s = 0; s < ev.xhat.size(); ++s) {
            scores.insert(scores.end(), sk_scores.begin(), sk_scores.end());
            labels.insert(labels.end(), sk_labels.begin(), sk_labels.end());
            recon_sum += ev.recon[s];
            omega_sum += ev.omega[s];
            ++m.n_samples;
        }
        for (double v : ev.mse_c) {
            mse_sum += v;
            ++mse_count;
        }
    }
    m.auroc = auroc(scores, labels);
    m.n_pooled_edges = scores.size();
    m.recon_mse = recon_sum / static_cast<double>(m.n_samples);
    m.mean_omega = omega_sum / static_cast<double>(m.n_samples);
    if (mse_count > 0) m.mse_c = mse_sum / static_cast<double>(mse_count);
    return m;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    std::size_t epoch = 0;
    double tau = 1.0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double valid_auroc = 0.5;
};

inline json to_json(const EpochLog& e) {
    return json{{"epoch", e.epoch},
                {"tau", e.tau},
                {"train_loss", e.train_loss},
                {"valid_loss", e.valid_loss},
                {"valid_auroc", e.valid_auroc}};
}

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
    double initial_objective = 0.0;  // mean train objective at init, fixed noise
    double final_objective = 0.0;    // same noise, final parameters
    std::size_t best_epoch = 0;
    double wall_seconds = 0.0;
};

inline std::uint64_t step_stream(std::size_t epoch, std::size_t step) {
    return (static_cast<std::uint64_t>(epoch + 1) << 32) | static_cast<std::uint64_t>(step);
}

/// Forward pass of a batch of one skeleton's scaled samples, sharing one posterior
/// computed from the skeleton's full sample set. Returns the mean total loss.
inline Var batch_objective(Tape& tape, const ParamVars& pv, const std::vector<SampleRecord>& recs, std::size_t first,
                           std::size_t count, const ModelConfig& mc, Variant variant, double tau, RngStream& rng,
                           std::size_t epoch) {
    const ScaledSkeleton sk = scale_skeleton(recs);
    if (!std::isfinite(sk.scale))
        throw NumericError("non-finite input at epoch " + std::to_string(epoch) + ", sample " + std::to_string(first));
    Posterior post = encode(tape, pv, sk.x, mc, true, rng);
    std::optional<Var> acc;
    for (std::size_t s = first; s < first + count; ++s) {
        const std::string where = "epoch " + std::to_string(epoch) + ", sample " + std::to_string(s);
        std::optional<ForwardOutputs> out;
        try {
            out = forward_sample(tape, sk.x[s], post, pv, mc, {variant, tau, true}, rng);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at " + where);
        }
        const ForwardOutputs& f = *out;
        if (!std::isfinite(f.loss.total.value()[0])) throw NumericError("non-finite loss at " + where);
        acc = acc ? add(*acc, f.loss.total) : f.loss.total;
    }
    return scale(*acc, 1.0 / static_cast<double>(count));
}

/// Mean training-mode objective over a split with a fixed noise stream, so
/// two parameter sets can be compared under common random numbers.
inline double mean_objective(const Checkpoint& ck, const DatasetBundle& data, Split split, double tau,
                             std::uint64_t seed) {
    const auto& ids = nonempty_split(data, split);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t id : ids) {
        Tape tape;
        ModelParams params = ck.params;
        ParamVars pv = bind_params(tape, params, false);
        RngStream rng(seed, 0xfffffff0ULL + id);
        const auto& recs = data.samples.at(id);
        total += batch_objective(tape, pv, recs, 0, recs.size(), ck.model, ck.variant, tau, rng, 0).value()[0] *
                 static_cast<double>(recs.size());
        count += recs.size();
    }
    return total / static_cast<double>(count);
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on the mean per-sample objective. Each step uses up to batch_size
/// samples of one skeleton; the order of (skeleton, chunk) steps is
/// reshuffled every epoch from the seed.
inline TrainResult train(const TrainConfig& cfg, const DatasetBundle& data, const EpochCallback& on_epoch = {},
                         std::size_t workers = 1) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const auto& train_ids = nonempty_split(data, Split::train);
    const bool have_valid = !data.manifest.valid_ids.empty();

    TrainResult res;
    Checkpoint& ck = res.checkpoint;
    ck.model = cfg.model_config(data.dim());
    ck.variant = cfg.variant;
    RngStream init_rng(cfg.seed, 0);
    ck.params = init_params(ck.model, init_rng);
    ck.extra = {{"seed", cfg.seed}, {"epochs", cfg.epochs}};

    const std::uint64_t objective_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
    res.initial_objective = mean_objective(ck, data, Split::train, cfg.tau_start, objective_seed);

    struct Chunk {
        std::size_t id, first, count;
    };
    std::vector<Chunk> chunks;
    for (std::size_t id : train_ids) {
        const std::size_t n = data.samples.at(id).size();
        for (std::size_t first = 0; first < n; first += cfg.batch_size)
            chunks.push_back({id, first, std::min(cfg.batch_size, n - first)});
    }

    Adam adam(AdamConfig{cfg.lr});
    auto refs = param_refs(ck.params);
    double best_auroc = -1.0;
    ModelParams best_params = ck.params;
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double tau = cfg.tau(epoch);
        RngStream order_rng(cfg.seed, step_stream(epoch, 0xffffffffULL));
        for (std::size_t i = chunks.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(order_rng.uniform() * static_cast<double>(i));
            std::swap(chunks[i - 1], chunks[std::min(j, i - 1)]);
        }
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t step = 0; step < chunks.size(); ++step) {
            const Chunk& ch = chunks[step];
            Tape tape;
            ParamVars pv = bind_params(tape, ck.params);
            RngStream rng(cfg.seed, step_stream(epoch, step));
            Var loss = batch_objective(tape, pv, data.samples.at(ch.id), ch.first, ch.count, ck.model, cfg.variant,
                                       tau, rng, epoch);
            tape.backward(loss);
            adam.step(refs, collect_grads(tape, pv));
            loss_sum += loss.value()[0] * static_cast<double>(ch.count);
            loss_count += ch.count;
        }

        EpochLog log;
        log.epoch = epoch;
        log.tau = tau;
        log.train_loss = loss_sum / static_cast<double>(loss_count);
        if (have_valid) {
            const Metrics vm = evaluate(ck, data, Split::valid, workers);
            log.valid_auroc = vm.auroc;
            log.valid_loss = vm.recon_mse;
        }
        res.log.push_back(log);
        if (on_epoch) on_epoch(log);

        if (cfg.patience > 0 && have_valid) {
            if (log.valid_auroc > best_auroc) {
                best_auroc = log.valid_auroc;
                best_params = ck.params;
                res.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
    }
    if (cfg.patience > 0 && have_valid && best_auroc >= 0.0) ck.params = best_params;
    res.final_objective = mean_objective(ck, data, Split::train, cfg.tau_start, objective_seed);
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

// ---------------------------------------------------------------------------
// Dumps and reports

inline const std::vector<std::string>& dump_tags() {
    static const std::vector<std::string> tags{"xhat", "e", "c", "l", "edges"};
    return tags;
}

inline std::vector<std::string> parse_dump_tags(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t end = std::min(csv.find(',', start), csv.size());
        const std::string tag = csv.substr(start, end - start);
        if (std::find(dump_tags().begin(), dump_tags().end(), tag) == dump_tags().end())
            throw ConfigError("unknown dump tag '" + tag + "' (expected xhat, e, c, l or edges)");
        if (std::find(out.begin(), out.end(), tag) == out.end()) out.push_back(tag);
        start = end + 1;
    }
    return out;
}

namespace detail {
inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string matrix_csv(const Tensor& t) {
    std::ostringstream os;
    os << "node";
    for (std::size_t d = 0; d < t.cols(); ++d) os << ",d" << d;
    os << "\n";
    for (std::size_t i = 0; i < t.rows(); ++i) {
        os << i;
        for (std::size_t d = 0; d < t.cols(); ++d) os << "," << fmt(t(i, d));
        os << "\n";
    }
    return os.str();
}
}  // namespace detail

/// Writes one CSV per requested tensor per sample (rows = nodes, one column
/// per dimension), one edges CSV of P per skeleton, and index.csv listing
/// every file with its shape.
inline void dump_representations(const Checkpoint& ck, const DatasetBundle& data, Split split,
                                 const std::vector<std::string>& what, const fs::path& out, std::size_t workers = 1) {
    const auto& ids = nonempty_split(data, split);
    fs::create_directories(out);
    std::vector<SkeletonEval> evals(ids.size());
    parallel_for(ids.size(), workers, [&](std::size_t k) { evals[k] = evaluate_skeleton(ck, data.samples.at(ids[k])); });

    std::ostringstream index;
    index << "file,tag,skeleton,sample,rows,cols\n";
    for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& ev = evals[k];
        const std::size_t id = ids[k];
        for (const auto& tag : what) {
            if (tag == "edges") {
                const std::size_t n = ev.edge_prob.rows();
                std::ostringstream os;
                os << "i,j,probability\n";
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < i; ++j) os << i << "," << j << "," << detail::fmt(ev.edge_prob(i, j)) << "\n";
                const std::string name = "edges_s" + std::to_string(id) + ".csv";
                write_file(out / name, os.str());
                index << name << ",edges," << id << ",," << n * (n - 1) / 2 << ",3\n";
                continue;
            }
            const auto& src = tag == "xhat" ? ev.xhat : tag == "e" ? ev.e : tag == "c" ? ev.c : ev.l;
            for (std::size_t s = 0; s < src.size(); ++s) {
                const std::string name = tag + "_s" + std::to_string(id) + "_" + std::to_string(s) + ".csv";
                write_file(out / name, detail::matrix_csv(src[s]));
                index << name << "," << tag << "," << id << "," << s << "," << src[s].rows() << "," << src[s].cols()
                      << "\n";
            }
        }
    }
    write_file(out / "index.csv", index.str());
}

// ---------------------------------------------------------------------------
// Reports and ablations

/// report.json body. wall_seconds is the training time recorded with the
/// model, so re-evaluating the same checkpoint yields identical bytes.
inline json make_report(const Metrics& m, Split split, const json& config, std::uint64_t seed,
                        const std::string& manifest_hash, double wall_seconds) {
    return json{{"split", split_name(split)},
                {"metrics", to_json(m)},
                {"config", config},
                {"seed", seed},
                {"dataset_manifest_crc32", manifest_hash},
                {"wall_clock_seconds", wall_seconds}};
}

struct AblationRow {
    Variant variant;
    Metrics metrics;
    TrainResult result;
};

inline const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::full, Variant::no_omega, Variant::no_z, Variant::no_c};
    return v;
}

/// Trains and evaluates every variant with otherwise identical settings.
inline std::vector<AblationRow> run_ablation(TrainConfig cfg, const DatasetBundle& data, Split split,
                                             std::size_t workers = 1, const EpochCallback& on_epoch = {}) {
    std::vector<AblationRow> rows;
    for (Variant v : all_variants()) {
        cfg.variant = v;
        TrainResult r = train(cfg, data, on_epoch, workers);
        Metrics m = evaluate(r.checkpoint, data, split, workers);
        rows.push_back({v, std::move(m), std::move(r)});
    }
    return rows;
}

inline json ablation_table(const std::vector<AblationRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        json row = to_json(r.metrics);
        row.erase("per_skeleton_auroc");
        row["variant"] = variant_name(r.variant);
        row["train_wall_seconds"] = r.result.wall_seconds;
        out.push_back(row);
    }
    return out;
}

}  // namespace bicd
