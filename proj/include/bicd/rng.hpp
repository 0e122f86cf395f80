#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "bicd/tensor.hpp"

namespace bicd {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Reproducible random stream keyed by (seed, stream id).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Distributions are computed here rather than through
/// <random>'s distribution classes, whose algorithms are
/// implementation-defined, so draws match across standard libraries.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream), engine_(splitmix64(splitmix64(seed) ^ splitmix64(~stream))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in the open interval (0, 1).
    double uniform() {
        for (;;) {
            const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
            if (u > 0.0) return u;
        }
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    double gumbel() { return -std::log(-std::log(uniform())); }

    /// Difference of two standard Gumbel draws (standard logistic).
    double logistic() {
        const double g1 = gumbel();
        const double g2 = gumbel();
        return g1 - g2;
    }

    /// Child stream, independent of this one's position.
    RngStream split(std::uint64_t sub) const {
        return RngStream(splitmix64(seed_ ^ 0x5851f42d4c957f2dULL) + stream_, sub);
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// i.i.d. standard logistic noise for binary-concrete relaxation.
inline Tensor sample_gumbel_logistic(RngStream& rng, const Shape& shape) {
    Tensor t(shape);
    for (auto& v : t.storage()) v = rng.logistic();
    return t;
}

inline Tensor sample_normal(RngStream& rng, const Shape& shape, double sigma = 1.0) {
    Tensor t(shape);
    for (auto& v : t.storage()) v = sigma * rng.normal();
    return t;
}

}  // namespace bicd
