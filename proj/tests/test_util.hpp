#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "bicd/numerics.hpp"

namespace bicd::testing {

inline Tensor random_tensor(RngStream& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.storage()) v = rng.uniform(lo, hi);
    return t;
}

/// Random unit lower triangular matrix with strictly-lower entries in [-s, s].
inline Tensor random_unit_lt(RngStream& rng, std::size_t n, double s = 1.0) {
    Tensor w = Tensor::identity(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) w(i, j) = rng.uniform(-s, s);
    return w;
}

/// Central finite difference of a scalar function of one tensor.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps entries
/// whose true derivative is ~0 from dominating through rounding noise.
inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        m = std::max(m, std::abs(a[i] - b[i]) / denom);
    }
    return m;
}

/// Gauss-Jordan inverse with partial pivoting (test oracle only).
inline Tensor dense_inverse(const Tensor& a) {
    const std::size_t n = a.rows();
    Tensor m = a;
    Tensor inv = Tensor::identity(n);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
        for (std::size_t k = 0; k < n; ++k) {
            std::swap(m(c, k), m(piv, k));
            std::swap(inv(c, k), inv(piv, k));
        }
        const double d = m(c, c);
        for (std::size_t k = 0; k < n; ++k) {
            m(c, k) /= d;
            inv(c, k) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = m(r, c);
            if (f == 0.0) continue;
            for (std::size_t k = 0; k < n; ++k) {
                m(r, k) -= f * m(c, k);
                inv(r, k) -= f * inv(c, k);
            }
        }
    }
    return inv;
}

/// Rank by row reduction with a relative pivot threshold (test oracle only).
inline std::size_t elimination_rank(Tensor m, double rel_tol = 1e-9) {
    const std::size_t rows = m.rows(), cols = m.cols();
    const double scale = std::max(m.max_abs(), 1e-300);
    std::size_t rank = 0;
    for (std::size_t c = 0; c < cols && rank < rows; ++c) {
        std::size_t piv = rank;
        for (std::size_t r = rank + 1; r < rows; ++r)
            if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
        if (std::abs(m(piv, c)) <= rel_tol * scale) continue;
        for (std::size_t k = 0; k < cols; ++k) std::swap(m(rank, k), m(piv, k));
        for (std::size_t r = rank + 1; r < rows; ++r) {
            const double f = m(r, c) / m(rank, c);
            for (std::size_t k = c; k < cols; ++k) m(r, k) -= f * m(rank, k);
        }
        ++rank;
    }
    return rank;
}

}  // namespace bicd::testing
