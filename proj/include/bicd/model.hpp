#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bicd/numerics.hpp"

namespace bicd {

enum class OmegaMode { rank, norm };

inline const char* omega_mode_name(OmegaMode m) { return m == OmegaMode::rank ? "rank" : "norm"; }

inline OmegaMode parse_omega_mode(const std::string& s) {
    if (s == "rank") return OmegaMode::rank;
    if (s == "norm") return OmegaMode::norm;
    throw ConfigError("unknown omega mode '" + s + "' (expected rank or norm)");
}

/// Which objective is trained. no_omega fixes the confounding weight at 1,
/// no_z swaps the causal-strength latent for a Gaussian noise latent, no_c
/// drops the confounding estimator.
enum class Variant { full, no_omega, no_z, no_c };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "none";
        case Variant::no_omega: return "no-omega";
        case Variant::no_z: return "no-z";
        case Variant::no_c: return "no-c";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "none" || s == "full") return Variant::full;
    if (s == "no-omega") return Variant::no_omega;
    if (s == "no-z") return Variant::no_z;
    if (s == "no-c") return Variant::no_c;
    throw ConfigError("unknown variant '" + s + "' (expected none, no-omega, no-z or no-c)");
}

struct ModelConfig {
    std::size_t dim = 1;
    std::size_t hidden = 64;
    std::size_t hidden_att = 16;
    double dropout = 0.1;
    double p0 = 0.3;  // gate prior
    double beta = 1.0;
    OmegaMode omega_mode = OmegaMode::rank;
    double rank_tol = 1e-2;

    void validate() const {
        if (dim == 0 || hidden == 0 || hidden_att == 0) throw ConfigError("model widths must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
        if (!(p0 > 0.0 && p0 < 1.0)) throw ConfigError("p0 must lie in (0, 1)");
        if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
        if (!(rank_tol > 0.0 && rank_tol < 1.0)) throw ConfigError("rank_tol must lie in (0, 1)");
    }
};

template <class T>
struct MlpT {
    T w1, b1, w2, b2;
};

/// All trainable weights. None of the shapes depend on the node count, so one
/// instance serves skeletons of any size. T is Tensor for storage and Var
/// once bound to a tape.
template <class T>
struct ParamSet {
    T w_q, w_k, w_s, gate_bias;  // attention encoder
    T w_enc;
    MlpT<T> mlp_e, mlp_l, mlp_v;  // mlp_v: log-variance head of the noise-latent variant
    T w_dec1, w_dec2;
    T est_u, est_bu, est_v, est_bv;  // confounding estimator

    /// Visits every tensor in checkpoint order.
    template <class F>
    void for_each(F&& f) {
        f("att.w_q", w_q);
        f("att.w_k", w_k);
        f("att.w_s", w_s);
        f("att.gate_bias", gate_bias);
        f("enc.w", w_enc);
        for (auto [prefix, m] : {std::pair{"mlp_e", &mlp_e}, std::pair{"mlp_l", &mlp_l}, std::pair{"mlp_v", &mlp_v}}) {
            f(std::string(prefix) + ".w1", m->w1);
            f(std::string(prefix) + ".b1", m->b1);
            f(std::string(prefix) + ".w2", m->w2);
            f(std::string(prefix) + ".b2", m->b2);
        }
        f("dec.w1", w_dec1);
        f("dec.w2", w_dec2);
        f("est.u", est_u);
        f("est.b_u", est_bu);
        f("est.v", est_v);
        f("est.b_v", est_bv);
    }
};

using ModelParams = ParamSet<Tensor>;
using ParamVars = ParamSet<Var>;

inline std::vector<ParamRef> param_refs(ModelParams& p) {
    std::vector<ParamRef> out;
    p.for_each([&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
    return out;
}

inline bool is_estimator_param(const std::string& name) { return name.rfind("est.", 0) == 0; }

/// Glorot-uniform weights, zero biases, gate bias at logit(p0).
inline ModelParams init_params(const ModelConfig& cfg, RngStream& rng) {
    cfg.validate();
    const std::size_t d = cfg.dim, h = cfg.hidden, ha = cfg.hidden_att;
    auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor t = Tensor::matrix(fan_in, fan_out);
        for (auto& v : t.storage()) v = rng.uniform(-a, a);
        return t;
    };
    auto mlp = [&] { return MlpT<Tensor>{glorot(h, h), Tensor::matrix(1, h), glorot(h, d), Tensor::matrix(1, d)}; };
    ModelParams p;
    p.w_q = glorot(d, ha);
    p.w_k = glorot(d, ha);
    p.w_s = glorot(d, ha);
    p.gate_bias = Tensor::matrix(1, 1, std::log(cfg.p0 / (1.0 - cfg.p0)));
    p.w_enc = glorot(d, h);
    p.mlp_e = mlp();
    p.mlp_l = mlp();
    p.mlp_v = mlp();
    p.w_dec1 = glorot(d, h);
    p.w_dec2 = glorot(h, d);
    p.est_u = glorot(d, 1);
    p.est_bu = Tensor::matrix(1, 1);
    p.est_v = glorot(2 * d, 1);
    p.est_bv = Tensor::matrix(1, 1);
    return p;
}

/// Puts every parameter on the tape, trainable or constant.
inline ParamVars bind_params(Tape& tape, ModelParams& p, bool trainable = true) {
    std::vector<Var> vars;
    p.for_each([&](const std::string&, Tensor& t) { vars.push_back(trainable ? tape.param(t) : tape.constant(t)); });
    ParamVars pv;
    std::size_t i = 0;
    pv.for_each([&](const std::string&, Var& v) { v = vars[i++]; });
    return pv;
}

/// Collects gradients in checkpoint order after tape.backward().
inline std::vector<Tensor> collect_grads(const Tape& tape, ParamVars& pv) {
    std::vector<Tensor> out;
    pv.for_each([&](const std::string&, Var& v) { out.push_back(tape.grad(v)); });
    return out;
}

// ---------------------------------------------------------------------------

/// 1 on the strictly-lower triangle: the only admissible edges j -> i, j < i.
inline Tensor strict_lower_mask(std::size_t n) {
    Tensor m = Tensor::matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) m(i, j) = 1.0;
    return m;
}

/// Inverted dropout: zeroes each entry with probability rate, scales survivors.
inline Tensor dropout(const Tensor& x, double rate, RngStream& rng) {
    if (rate == 0.0) return x;
    Tensor out = x;
    for (auto& v : out.storage()) v = rng.bernoulli(rate) ? 0.0 : v / (1.0 - rate);
    return out;
}

/// Edge posterior q(z | X): gate logits, gate probabilities and strengths,
/// all zero outside the strictly-lower support.
struct Posterior {
    Var logits;
    Var prob;
    Var strength;
    Tensor mask;

    std::size_t nodes() const { return mask.rows(); }
};

/// Graph-attention encoder. Scores are averaged over the context samples,
/// which are draws from the same skeleton; a single-sample context gives the
/// per-sample scores.
///
///   logit_ij    = mean_s <elu(x_si W_Q), elu(x_sj W_K)> / sqrt(H_att) + b
///   strength_ij = mean_s <x_si W_S,      elu(x_sj W_K)> / sqrt(H_att)
inline Posterior encode(Tape& tape, const ParamVars& pv, std::span<const Tensor> context, const ModelConfig& cfg,
                        bool dropout_on, RngStream& rng) {
    if (context.empty()) throw ContractError("encode: empty context");
    const std::size_t n = context.front().rows(), d = context.front().cols();
    if (n == 0) throw ContractError("encode: sample has no nodes");
    if (d != cfg.dim || pv.w_q.value().rows() != d)
        throw ConfigError("encode: data dimension " + std::to_string(d) + " does not match model dimension " +
                          std::to_string(cfg.dim));
    Tensor stacked = Tensor::matrix(n * context.size(), d);
    for (std::size_t s = 0; s < context.size(); ++s) {
        if (context[s].rows() != n || context[s].cols() != d)
            throw DimensionError("encode: context samples must share one shape");
        const Tensor xs = dropout_on ? dropout(context[s], cfg.dropout, rng) : context[s];
        std::copy(xs.storage().begin(), xs.storage().end(), stacked.storage().begin() + static_cast<std::ptrdiff_t>(s * n * d));
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_att));
    Var x = tape.constant(std::move(stacked));
    Var q = elu(matmul(x, pv.w_q));
    Var k = elu(matmul(x, pv.w_k));
    Var sv = matmul(x, pv.w_s);
    Tensor mask = strict_lower_mask(n);
    Var mask_v = tape.constant(mask);
    Var logits = mul(add_scalar(pooled_gram(q, k, context.size(), inv_sqrt), pv.gate_bias), mask_v);
    Var prob = mul(sigmoid(logits), mask_v);
    Var strength = mul(pooled_gram(sv, k, context.size(), inv_sqrt), mask_v);
    return Posterior{logits, prob, strength, std::move(mask)};
}

/// Relaxed latent z = I - G (.) S.
struct LatentZ {
    Var z;
    Var gates;
    double temperature;
};

/// Binary-concrete gates G = sigmoid((logit + logistic noise) / tau). With
/// hard set, gates are rounded to {0, 1} and carry no gradient.
inline LatentZ sample_z(Tape& tape, const Posterior& post, double tau, RngStream& rng, bool hard = false) {
    if (!(tau > 0.0)) throw ContractError("sample_z: temperature must be positive");
    const std::size_t n = post.nodes();
    Var noise = tape.constant(sample_gumbel_logistic(rng, {n, n}));
    Var mask = tape.constant(post.mask);
    Var gates = mul(sigmoid(scale(add(post.logits, noise), 1.0 / tau)), mask);
    if (hard) {
        Tensor g = gates.value();
        for (auto& v : g.storage()) v = v > 0.5 ? 1.0 : 0.0;
        gates = tape.constant(std::move(g));
    }
    Var z = sub(tape.constant(Tensor::identity(n)), mul(gates, post.strength));
    return LatentZ{z, gates, tau};
}

/// z at the posterior mean gates: I - P (.) S. Used for evaluation and by the
/// encoder-side GNN.
inline Var mean_z(Tape& tape, const Posterior& post) {
    return sub(tape.constant(Tensor::identity(post.nodes())), mul(post.prob, post.strength));
}

inline Var apply_mlp(const MlpT<Var>& m, const Var& h) {
    return add_row(matmul(elu(add_row(matmul(h, m.w1), m.b1)), m.w2), m.b2);
}

struct Extracted {
    Var bl_plus_e;  // N x H
    Var e;          // N x D
    Var l;          // N x D
};

/// BL+E = elu((I - P (.) S) (X_drop W_enc)); E and L are MLP heads on it.
inline Extracted extract_e_l(Tape& tape, const Tensor& x_drop, const Posterior& post, const ParamVars& pv,
                             bool with_l = true) {
    if (x_drop.rows() != post.nodes()) throw DimensionError("extract_e_l: node count mismatch");
    Var h = matmul(tape.constant(x_drop), pv.w_enc);
    Var ble = elu(matmul(mean_z(tape, post), h));
    Var e = apply_mlp(pv.mlp_e, ble);
    Var l = with_l ? apply_mlp(pv.mlp_l, ble) : Var{};
    return Extracted{ble, e, l};
}

/// X_hat = elu(z^{-1} (E W_dec1)) W_dec2, with z^{-1} applied by forward
/// substitution.
inline Var decode(const Var& z, const Var& e, const ParamVars& pv) {
    return matmul(elu(unit_lt_solve(z, matmul(e, pv.w_dec1))), pv.w_dec2);
}

struct ConfoundingEstimate {
    Var c;  // N x D
    Var w;  // N x 1, on the simplex
};

/// C_j = w_j x_j with w_j proportional to sigmoid(u.x_j + b_u) * sigmoid(v.[x_j; L_j] + b_v).
inline ConfoundingEstimate estimate_c(Tape& tape, const Tensor& x, const Var& l, const ParamVars& pv) {
    Var xv = tape.constant(x);
    Var s = sigmoid(add_scalar(matmul(xv, pv.est_u), pv.est_bu));
    Var t = sigmoid(add_scalar(matmul(concat_cols(xv, l), pv.est_v), pv.est_bv));
    Var st = mul(s, t);
    Var w = div_by_scalar(st, sum(st));
    return ConfoundingEstimate{row_scale(w, xv), w};
}

/// Confounding score in [0, 1]. rank: numerical_rank(L) / N. norm:
/// 2 sigmoid(rms(L)) - 1. Never differentiated.
inline double confounding_score(const Tensor& l, OmegaMode mode, double rank_tol = 1e-2) {
    l.assert_finite("L");
    const double n = static_cast<double>(l.rows());
    if (n == 0) return 0.0;
    if (mode == OmegaMode::rank) return std::clamp(static_cast<double>(numerical_rank(l, rank_tol)) / n, 0.0, 1.0);
    double ss = 0.0;
    for (double v : l.storage()) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(l.size()));
    return std::clamp(2.0 * sigmoid(rms) - 1.0, 0.0, 1.0);
}

struct LossParts {
    Var recon_plain;
    std::optional<Var> recon_conf;
    Var l_rc;
    Var kl_gate;
    Var kl_strength;
    Var total;
};

/// l_rc = omega MSE(X, X_hat + C) + (1 - omega) MSE(X, X_hat);
/// total = l_rc + beta (KL_gate + KL_strength), with
/// KL_gate = sum KL(Bern(P_ij) || Bern(p0)) and KL_strength = sum P_ij S_ij^2 / 2.
/// Without C the first branch is absent and l_rc = MSE(X, X_hat).
inline LossParts compute_loss(Tape& tape, const Tensor& x, const Var& xhat, const std::optional<Var>& c, double omega,
                              const Posterior& post, double beta, double p0) {
    if (!(omega >= 0.0 && omega <= 1.0)) throw ContractError("loss: omega must lie in [0, 1], got " + std::to_string(omega));
    Var xv = tape.constant(x);
    LossParts out;
    out.recon_plain = mse(xv, xhat);
    if (c) {
        out.recon_conf = mse(xv, add(xhat, *c));
        out.l_rc = add(scale(*out.recon_conf, omega), scale(out.recon_plain, 1.0 - omega));
    } else {
        out.l_rc = out.recon_plain;
    }
    out.kl_gate = bernoulli_kl_from_logits(post.logits, post.mask, p0);
    out.kl_strength = scale(sum(mul(post.prob, mul(post.strength, post.strength))), 0.5);
    out.total = add(out.l_rc, scale(add(out.kl_gate, out.kl_strength), beta));
    return out;
}

struct ForwardOutputs {
    Var xhat;
    Var e;
    std::optional<Var> l;
    std::optional<Var> c;
    std::optional<Var> w;
    double omega = 0.0;
    LossParts loss;
    Var kl_noise;  // noise-latent variant only
};

/// Per-sample randomness and mode switches for one forward pass.
struct ForwardOptions {
    Variant variant = Variant::full;
    double tau = 1.0;
    bool training = true;  // dropout on, sampled gates; off: mean gates, no dropout
};

/// sum KL(N(mu, exp(logvar)) || N(0, 1)) = 0.5 sum (mu^2 + e^logvar - logvar - 1).
inline Var gaussian_kl(const Var& mu, const Var& logvar) {
    return scale(sum(add_scalar(sub(add(mul(mu, mu), elementwise(Unary::exp, logvar)), logvar), -1.0)), 0.5);
}

/// Noise-latent baseline: E ~ N(mu, exp(logvar)) from heads on BL+E, decoded
/// through the deterministic z = I - P (.) S. Loss is l_rc + beta KL(q(E) || N(0, I)).
inline ForwardOutputs forward_noise_latent(Tape& tape, const Tensor& x, const Posterior& post, const ParamVars& pv,
                                           const ModelConfig& cfg, const ForwardOptions& opt, RngStream& rng) {
    const Tensor x_drop = opt.training ? dropout(x, cfg.dropout, rng) : x;
    Extracted ex = extract_e_l(tape, x_drop, post, pv);
    Var mu = ex.e;
    Var logvar = apply_mlp(pv.mlp_v, ex.bl_plus_e);
    Var e = mu;
    if (opt.training) {
        Var eps = tape.constant(sample_normal(rng, mu.shape()));
        e = add(mu, mul(elementwise(Unary::exp, scale(logvar, 0.5)), eps));
    }
    ForwardOutputs out;
    out.e = e;
    out.xhat = decode(mean_z(tape, post), e, pv);
    out.l = ex.l;
    out.omega = confounding_score(ex.l.value(), cfg.omega_mode, cfg.rank_tol);
    auto est = estimate_c(tape, x, ex.l, pv);
    out.c = est.c;
    out.w = est.w;

    Var kl = gaussian_kl(mu, logvar);
    out.kl_noise = kl;
    Var xv = tape.constant(x);
    LossParts lp;
    lp.recon_plain = mse(xv, out.xhat);
    lp.recon_conf = mse(xv, add(out.xhat, *out.c));
    lp.l_rc = add(scale(*lp.recon_conf, out.omega), scale(lp.recon_plain, 1.0 - out.omega));
    lp.kl_gate = tape.constant(Tensor({1}, 0.0));
    lp.kl_strength = tape.constant(Tensor({1}, 0.0));
    lp.total = add(lp.l_rc, scale(kl, cfg.beta));
    out.loss = lp;
    return out;
}

/// One sample's forward pass for any variant, given its skeleton posterior.
inline ForwardOutputs forward_sample(Tape& tape, const Tensor& x, const Posterior& post, const ParamVars& pv,
                                     const ModelConfig& cfg, const ForwardOptions& opt, RngStream& rng) {
    if (opt.variant == Variant::no_z) return forward_noise_latent(tape, x, post, pv, cfg, opt, rng);

    const bool with_c = opt.variant != Variant::no_c;
    const Tensor x_drop = opt.training ? dropout(x, cfg.dropout, rng) : x;
    Extracted ex = extract_e_l(tape, x_drop, post, pv, with_c);
    Var z = opt.training ? sample_z(tape, post, opt.tau, rng).z : mean_z(tape, post);

    ForwardOutputs out;
    out.e = ex.e;
    out.xhat = decode(z, ex.e, pv);
    if (with_c) {
        out.l = ex.l;
        auto est = estimate_c(tape, x, ex.l, pv);
        out.c = est.c;
        out.w = est.w;
        out.omega = opt.variant == Variant::no_omega ? 1.0 : confounding_score(ex.l.value(), cfg.omega_mode, cfg.rank_tol);
    }
    out.loss = compute_loss(tape, x, out.xhat, out.c, out.omega, post, cfg.beta, cfg.p0);
    return out;
}

}  // namespace bicd
