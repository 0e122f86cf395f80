#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bicd/numerics.hpp"
#include "bicd/parallel.hpp"

namespace bicd {

/// Generation ingredients for a multi-skeleton linear SEM with latent
/// confounders.
struct GenConfig {
    std::size_t n_nodes = 50;
    std::size_t n_confounders = 1;
    double pervasiveness = 0.7;
    std::size_t samples_per_skeleton = 50;
    std::size_t train_skeletons = 450;
    std::size_t valid_skeletons = 100;
    std::size_t test_skeletons = 200;
    double expected_degree = 5.0;
    double weight_lo = 0.5;
    double weight_hi = 1.5;
    double noise_sigma = 0.5;
    std::size_t dim = 1;
    /// Fraction of confounders given one observed parent. Smoke tests only.
    double endogenous_fraction = 0.0;

    void validate() const {
        if (n_nodes < 2) throw ConfigError("n_nodes must be at least 2");
        if (!(pervasiveness > 0.0 && pervasiveness <= 1.0)) throw ConfigError("pervasiveness must lie in (0, 1]");
        if (samples_per_skeleton == 0) throw ConfigError("samples_per_skeleton must be positive");
        if (train_skeletons == 0 || valid_skeletons == 0 || test_skeletons == 0)
            throw ConfigError("skeleton counts must be positive");
        if (!(expected_degree > 0.0) || expected_degree >= static_cast<double>(n_nodes))
            throw ConfigError("expected_degree must lie in (0, n_nodes)");
        if (!(weight_lo >= 0.0 && weight_hi >= weight_lo)) throw ConfigError("weight range must satisfy 0 <= lo <= hi");
        if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
        if (dim == 0) throw ConfigError("dim must be positive");
        if (!(endogenous_fraction >= 0.0 && endogenous_fraction <= 1.0))
            throw ConfigError("endogenous_fraction must lie in [0, 1]");
    }

    /// Probability of each ordered pair (j < i) carrying the edge x_j -> x_i.
    /// Every node has N-1 candidate neighbours, so its expected neighbourhood
    /// size (parents plus children) equals expected_degree.
    double edge_probability() const { return expected_degree / static_cast<double>(n_nodes - 1); }
};

/// Ground-truth causal structure of one skeleton.
struct SkeletonSpec {
    std::size_t id = 0;
    std::size_t n_nodes = 0;
    std::size_t n_confounders = 0;
    Tensor adjacency;  // N x N, A(child, parent), strictly lower triangular
    Tensor loadings;   // N x K, B(node, confounder)
    double noise_sigma = 0.5;
    /// Observed parent of each confounder, or -1 when exogenous.
    std::vector<std::int64_t> confounder_parent;
    std::vector<double> confounder_parent_weight;

    std::size_t edge_count() const {
        std::size_t c = 0;
        for (double v : adjacency.storage()) c += v != 0.0;
        return c;
    }
};

/// One observation: X = A X + B L + E, and C = (I - A)^{-1} B L.
struct SampleRecord {
    Tensor x;       // N x D
    Tensor l_true;  // K x D
    Tensor e_true;  // N x D
    Tensor c_true;  // N x D
};

enum class Split { train, valid, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "valid") return Split::valid;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "' (expected train, valid or test)");
}

struct Manifest {
    std::string format_version = "1";
    std::string name;
    std::uint64_t seed = 0;
    std::string preset;  // empty for explicit configs
    std::string graph_model = "erdos-renyi";
    GenConfig gen;
    std::vector<std::size_t> train_ids, valid_ids, test_ids;

    const std::vector<std::size_t>& split_ids(Split s) const {
        switch (s) {
            case Split::train: return train_ids;
            case Split::valid: return valid_ids;
            case Split::test: return test_ids;
        }
        return train_ids;
    }
};

struct DatasetBundle {
    Manifest manifest;
    std::vector<SkeletonSpec> skeletons;            // indexed by skeleton id
    std::vector<std::vector<SampleRecord>> samples;  // indexed by skeleton id

    std::size_t dim() const { return manifest.gen.dim; }
};

namespace detail {

inline double draw_weight(RngStream& rng, double lo, double hi) {
    const double mag = rng.uniform(lo, hi);
    return rng.bernoulli(0.5) ? mag : -mag;
}

}  // namespace detail

/// Draws a random DAG over N ordered nodes plus confounder loadings.
inline SkeletonSpec sample_skeleton(const GenConfig& cfg, RngStream& rng, std::size_t id = 0) {
    cfg.validate();
    const std::size_t n = cfg.n_nodes, k = cfg.n_confounders;
    SkeletonSpec s;
    s.id = id;
    s.n_nodes = n;
    s.n_confounders = k;
    s.noise_sigma = cfg.noise_sigma;
    s.adjacency = Tensor::matrix(n, n);
    s.loadings = Tensor::matrix(n, k);

    const double p = cfg.edge_probability();
    for (std::size_t i = 1; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (rng.bernoulli(p)) s.adjacency(i, j) = detail::draw_weight(rng, cfg.weight_lo, cfg.weight_hi);

    s.confounder_parent.assign(k, -1);
    s.confounder_parent_weight.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t first_child = 0;
        if (cfg.endogenous_fraction > 0.0 && rng.bernoulli(cfg.endogenous_fraction)) {
            // Parent drawn among all but the last node so the confounder can
            // still reach a later node.
            const auto parent = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - 1));
            s.confounder_parent[c] = static_cast<std::int64_t>(parent);
            s.confounder_parent_weight[c] = detail::draw_weight(rng, cfg.weight_lo, cfg.weight_hi);
            first_child = parent + 1;
        }
        for (std::size_t j = first_child; j < n; ++j)
            if (rng.bernoulli(cfg.pervasiveness)) s.loadings(j, c) = detail::draw_weight(rng, cfg.weight_lo, cfg.weight_hi);
    }
    return s;
}

/// Draws n samples from a skeleton: L ~ N(0,1), E ~ N(0, sigma^2), and X, C by
/// forward substitution through the node order.
inline std::vector<SampleRecord> sample_records(const SkeletonSpec& spec, std::size_t n, std::size_t dim, RngStream& rng) {
    const std::size_t nn = spec.n_nodes, k = spec.n_confounders;
    std::vector<SampleRecord> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        SampleRecord r;
        r.l_true = Tensor::matrix(k, dim);
        r.e_true = Tensor::matrix(nn, dim);
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t d = 0; d < dim; ++d) r.l_true(c, d) = rng.normal();
        for (std::size_t i = 0; i < nn; ++i)
            for (std::size_t d = 0; d < dim; ++d) r.e_true(i, d) = spec.noise_sigma * rng.normal();

        r.x = Tensor::matrix(nn, dim);
        r.c_true = Tensor::matrix(nn, dim);
        for (std::size_t i = 0; i < nn; ++i) {
            // Endogenous confounders become fixed once their parent is known.
            for (std::size_t c = 0; c < k; ++c)
                if (spec.confounder_parent[c] >= 0 && static_cast<std::size_t>(spec.confounder_parent[c]) + 1 == i)
                    for (std::size_t d = 0; d < dim; ++d)
                        r.l_true(c, d) += spec.confounder_parent_weight[c] * r.x(i - 1, d);
            for (std::size_t d = 0; d < dim; ++d) {
                double conf = 0.0;
                for (std::size_t c = 0; c < k; ++c) conf += spec.loadings(i, c) * r.l_true(c, d);
                double xv = conf + r.e_true(i, d), cv = conf;
                for (std::size_t j = 0; j < i; ++j) {
                    const double a = spec.adjacency(i, j);
                    if (a == 0.0) continue;
                    xv += a * r.x(j, d);
                    cv += a * r.c_true(j, d);
                }
                r.x(i, d) = xv;
                r.c_true(i, d) = cv;
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

struct PresetRow {
    const char* name;
    std::size_t samples;
    std::size_t confounders;
    std::size_t nodes;
    double pervasiveness;
};

/// Synthetic benchmark ingredients: samples per skeleton, confounders,
/// observed nodes, pervasiveness. Every preset uses 450/100/200 skeletons.
inline constexpr std::array<PresetRow, 9> kPresets{{
    {"syn1", 5, 1, 50, 0.7},
    {"syn2", 10, 1, 50, 0.7},
    {"syn3", 50, 1, 50, 0.7},
    {"syn4", 50, 5, 50, 0.7},
    {"syn5", 50, 10, 50, 0.7},
    {"syn6", 50, 1, 20, 0.7},
    {"syn7", 50, 1, 100, 0.7},
    {"syn8", 50, 1, 50, 0.1},
    {"syn9", 50, 1, 50, 0.4},
}};

inline std::string preset_names() {
    std::string s;
    for (const auto& p : kPresets) s += (s.empty() ? "" : ", ") + std::string(p.name);
    return s;
}

inline std::size_t scaled_count(std::size_t count, double scale) {
    const auto v = static_cast<std::size_t>(std::llround(static_cast<double>(count) * scale));
    return std::max<std::size_t>(v, 1);
}

/// Generation config for a named preset; scale shrinks skeleton counts.
inline GenConfig preset_config(const std::string& name, double scale = 1.0) {
    if (!(scale > 0.0)) throw ConfigError("scale must be positive");
    for (const auto& p : kPresets) {
        if (name != p.name) continue;
        GenConfig cfg;
        cfg.samples_per_skeleton = p.samples;
        cfg.n_confounders = p.confounders;
        cfg.n_nodes = p.nodes;
        cfg.pervasiveness = p.pervasiveness;
        cfg.train_skeletons = scaled_count(450, scale);
        cfg.valid_skeletons = scaled_count(100, scale);
        cfg.test_skeletons = scaled_count(200, scale);
        return cfg;
    }
    throw ConfigError("unknown preset '" + name + "'; valid presets: " + preset_names());
}

/// Generates every skeleton and its samples. Skeleton m uses RNG stream m,
/// so the result does not depend on generation order or worker count.
inline DatasetBundle generate_dataset(const GenConfig& cfg, std::uint64_t seed, const std::string& name,
                                      const std::string& preset = "", std::size_t workers = 1) {
    cfg.validate();
    DatasetBundle b;
    b.manifest.name = name;
    b.manifest.seed = seed;
    b.manifest.preset = preset;
    b.manifest.gen = cfg;
    const std::size_t total = cfg.train_skeletons + cfg.valid_skeletons + cfg.test_skeletons;
    for (std::size_t m = 0; m < total; ++m) {
        if (m < cfg.train_skeletons)
            b.manifest.train_ids.push_back(m);
        else if (m < cfg.train_skeletons + cfg.valid_skeletons)
            b.manifest.valid_ids.push_back(m);
        else
            b.manifest.test_ids.push_back(m);
    }
    b.skeletons.resize(total);
    b.samples.resize(total);
    parallel_for(total, workers, [&](std::size_t m) {
        RngStream rng(seed, m);
        b.skeletons[m] = sample_skeleton(cfg, rng, m);
        b.samples[m] = sample_records(b.skeletons[m], cfg.samples_per_skeleton, cfg.dim, rng);
    });
    return b;
}

inline DatasetBundle build_preset(const std::string& name, std::uint64_t seed, double scale = 1.0) {
    return generate_dataset(preset_config(name, scale), seed, name, name);
}

/// max |(I - A) X - B L - E| over one sample.
inline double reconstruction_residual(const SkeletonSpec& s, const SampleRecord& r) {
    double worst = 0.0;
    for (std::size_t i = 0; i < s.n_nodes; ++i)
        for (std::size_t d = 0; d < r.x.cols(); ++d) {
            double v = r.x(i, d) - r.e_true(i, d);
            for (std::size_t j = 0; j < s.n_nodes; ++j) v -= s.adjacency(i, j) * r.x(j, d);
            for (std::size_t c = 0; c < s.n_confounders; ++c) v -= s.loadings(i, c) * r.l_true(c, d);
            worst = std::max(worst, std::abs(v));
        }
    return worst;
}

}  // namespace bicd
