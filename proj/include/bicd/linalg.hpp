#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bicd/tensor.hpp"

namespace bicd {

inline constexpr double kUnitLtTolerance = 1e-12;

/// Throws StructureError unless w is square with unit diagonal and zero
/// strictly-upper part (both to kUnitLtTolerance).
inline void check_unit_lower_triangular(const Tensor& w) {
    if (w.rank() != 2 || w.rows() != w.cols())
        throw StructureError("unit lower triangular matrix must be square, got " + shape_str(w.shape()));
    const std::size_t n = w.rows();
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(w(i, i) - 1.0) > kUnitLtTolerance)
            throw StructureError("diagonal entry (" + std::to_string(i) + "," + std::to_string(i) +
                                 ") is not 1");
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(w(i, j)) > kUnitLtTolerance)
                throw StructureError("upper entry (" + std::to_string(i) + "," + std::to_string(j) +
                                     ") is nonzero");
    }
}

/// Solves w * y = rhs by forward substitution; w must be unit lower triangular.
inline Tensor forward_substitute(const Tensor& w, const Tensor& rhs) {
    check_unit_lower_triangular(w);
    if (rhs.rank() != 2 || rhs.rows() != w.rows())
        throw DimensionError("unit_lt_solve shape mismatch " + shape_str(w.shape()) + " vs " +
                             shape_str(rhs.shape()));
    const std::size_t n = rhs.rows(), d = rhs.cols();
    Tensor y = rhs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double wij = w(i, j);
            if (wij == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) y(i, c) -= wij * y(j, c);
        }
    return y;
}

/// Transposed solve w^T * y = rhs (backward substitution), used by the
/// adjoint of forward_substitute.
inline Tensor backward_substitute_transposed(const Tensor& w, const Tensor& rhs) {
    const std::size_t n = rhs.rows(), d = rhs.cols();
    Tensor y = rhs;
    for (std::size_t ii = n; ii-- > 0;)
        for (std::size_t j = ii + 1; j < n; ++j) {
            const double wji = w(j, ii);
            if (wji == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) y(ii, c) -= wji * y(j, c);
        }
    return y;
}

/// Singular values of an m x n matrix by one-sided Jacobi rotations,
/// sorted descending. Iteration cap is 100 * min(m, n) sweeps.
inline std::vector<double> singular_values(const Tensor& m) {
    if (m.rank() != 2) throw DimensionError("singular_values needs a matrix, got " + shape_str(m.shape()));
    m.assert_finite("rank input");
    // Work on columns of the taller orientation so the column count is min(m, n).
    const bool tall = m.rows() >= m.cols();
    const std::size_t rows = tall ? m.rows() : m.cols();
    const std::size_t cols = tall ? m.cols() : m.rows();
    std::vector<std::vector<double>> a(cols, std::vector<double>(rows));
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (tall)
                a[c][r] = m(r, c);
            else
                a[r][c] = m(r, c);
        }

    const std::size_t max_sweeps = 100 * std::max<std::size_t>(1, cols);
    const double eps = 1e-15;
    // Columns whose squared norm falls below this are numerically zero;
    // rotating against them never settles.
    double frob2 = 0.0;
    for (const auto& col : a)
        for (double x : col) frob2 += x * x;
    const double negligible = 1e-30 * frob2;
    bool converged = cols < 2;
    for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < cols; ++p)
            for (std::size_t q = p + 1; q < cols; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    alpha += a[p][r] * a[p][r];
                    beta += a[q][r] * a[q][r];
                    gamma += a[p][r] * a[q][r];
                }
                if (gamma == 0.0 || alpha <= negligible || beta <= negligible ||
                    std::abs(gamma) <= eps * std::sqrt(alpha * beta))
                    continue;
                converged = false;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t r = 0; r < rows; ++r) {
                    const double ap = a[p][r], aq = a[q][r];
                    a[p][r] = c * ap - s * aq;
                    a[q][r] = s * ap + c * aq;
                }
            }
    }
    if (!converged) throw NumericError("one-sided Jacobi SVD did not converge");

    std::vector<double> sv(cols);
    for (std::size_t c = 0; c < cols; ++c)
        sv[c] = std::sqrt(std::inner_product(a[c].begin(), a[c].end(), a[c].begin(), 0.0));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

/// Number of singular values above tol * sigma_max. Zero matrix has rank 0.
inline std::size_t numerical_rank(const Tensor& m, double tol = 1e-2) {
    const auto sv = singular_values(m);
    if (sv.empty() || sv.front() == 0.0) return 0;
    const double cut = tol * sv.front();
    return static_cast<std::size_t>(std::count_if(sv.begin(), sv.end(), [&](double s) { return s > cut; }));
}

}  // namespace bicd
