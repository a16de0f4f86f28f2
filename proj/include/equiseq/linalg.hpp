#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "equiseq/errors.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/rng.hpp"

namespace equiseq {

/// Householder reflection Q = I - (2/|u|^2) u u^T. Maps u to -u and fixes
/// the hyperplane orthogonal to u; symmetric, orthogonal, involutive.
inline Matrix householder(const std::vector<double>& u) {
    const int d = static_cast<int>(u.size());
    double norm_sq = 0.0;
    for (double v : u) norm_sq += v * v;
    if (std::sqrt(norm_sq) < 1e-300) {
        throw DegenerateInputError("householder: reflection vector has norm below 1e-300");
    }
    Matrix q = Matrix::identity(d);
    const double c = 2.0 / norm_sq;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) q(i, j) -= c * u[i] * u[j];
    return q;
}

/// Random d x d orthogonal matrix: the product of d Householder reflections
/// with independent unit-Gaussian direction vectors. Deterministic per rng
/// state. Outputs are orthogonal to machine precision; no uniformity claim
/// over the orthogonal group is made.
inline Matrix random_orthogonal(int d, Rng& rng) {
    if (d < 1) throw ShapeError("random_orthogonal: d must be >= 1, got " + std::to_string(d));
    Matrix q = Matrix::identity(d);
    std::vector<double> u(d);
    for (int r = 0; r < d; ++r) {
        for (int i = 0; i < d; ++i) u[i] = rng.gaussian();
        q = matmul(householder(u), q);
    }
    return q;
}

/// Uniform random n x n permutation matrix via Fisher-Yates.
inline Matrix random_permutation(int n, Rng& rng) {
    if (n < 1) throw ShapeError("random_permutation: n must be >= 1, got " + std::to_string(n));
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    Matrix p(n, n);
    for (int j = 0; j < n; ++j) p(perm[j], j) = 1.0;
    return p;
}

/// Row-wise softmax with max subtraction. Each output row sums to 1.
inline Matrix softmax_rows(const Matrix& a) {
    if (!a.all_finite()) {
        throw InvalidInputError("softmax_rows: input contains non-finite entries");
    }
    Matrix s(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i) {
        double m = a(i, 0);
        for (int j = 1; j < a.cols(); ++j) m = std::max(m, a(i, j));
        double sum = 0.0;
        for (int j = 0; j < a.cols(); ++j) {
            s(i, j) = std::exp(a(i, j) - m);
            sum += s(i, j);
        }
        for (int j = 0; j < a.cols(); ++j) s(i, j) /= sum;
    }
    return s;
}

namespace detail {

/// LU factorization with partial pivoting, in place. Returns false on a
/// vanishing pivot (singular to machine precision).
inline bool lu_factor(Matrix& a, std::vector<int>& piv) {
    const int n = a.rows();
    piv.resize(n);
    std::iota(piv.begin(), piv.end(), 0);
    for (int c = 0; c < n; ++c) {
        int best = c;
        double best_abs = std::abs(a(c, c));
        for (int r = c + 1; r < n; ++r) {
            if (std::abs(a(r, c)) > best_abs) {
                best = r;
                best_abs = std::abs(a(r, c));
            }
        }
        if (best_abs == 0.0 || !std::isfinite(best_abs)) return false;
        if (best != c) {
            for (int j = 0; j < n; ++j) std::swap(a(c, j), a(best, j));
            std::swap(piv[c], piv[best]);
        }
        for (int r = c + 1; r < n; ++r) {
            a(r, c) /= a(c, c);
            const double f = a(r, c);
            for (int j = c + 1; j < n; ++j) a(r, j) -= f * a(c, j);
        }
    }
    return true;
}

inline std::vector<double> lu_solve(const Matrix& lu, const std::vector<int>& piv,
                                    const std::vector<double>& b) {
    const int n = lu.rows();
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = b[piv[i]];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) x[i] -= lu(i, j) * x[j];
    for (int i = n - 1; i >= 0; --i) {
        for (int j = i + 1; j < n; ++j) x[i] -= lu(i, j) * x[j];
        x[i] /= lu(i, i);
    }
    return x;
}

inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

/// Condition estimate for a symmetric positive definite matrix: largest
/// eigenvalue by power iteration, smallest by inverse power iteration on
/// the LU factors. Deterministic all-ones start vector.
inline double spd_condition_estimate(const Matrix& g, const Matrix& lu, const std::vector<int>& piv) {
    const int n = g.rows();
    if (n == 0) return 1.0;
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    double lambda_max = 0.0;
    for (int it = 0; it < 100; ++it) {
        std::vector<double> w(n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) w[i] += g(i, j) * v[j];
        const double norm = vec_norm(w);
        if (norm == 0.0) return std::numeric_limits<double>::infinity();
        const double prev = lambda_max;
        lambda_max = norm;
        for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
        if (it > 4 && std::abs(lambda_max - prev) <= 1e-12 * lambda_max) break;
    }
    std::fill(v.begin(), v.end(), 1.0 / std::sqrt(static_cast<double>(n)));
    double inv_lambda_min = 0.0;
    for (int it = 0; it < 100; ++it) {
        std::vector<double> w = lu_solve(lu, piv, v);
        const double norm = vec_norm(w);
        if (!std::isfinite(norm) || norm == 0.0) return std::numeric_limits<double>::infinity();
        const double prev = inv_lambda_min;
        inv_lambda_min = norm;
        for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
        if (it > 4 && std::abs(inv_lambda_min - prev) <= 1e-12 * inv_lambda_min) break;
    }
    return lambda_max * inv_lambda_min;
}

} // namespace detail

/// Left pseudo-inverse of a full-column-rank x (d x n): L = (x^T x)^{-1} x^T,
/// so that L x = I_n. Computed by pivoted Gaussian elimination on the normal
/// equations; inputs whose Gram condition estimate exceeds 1e12 are rejected.
inline Matrix pseudo_inverse_left(const Matrix& x) {
    const int n = x.cols();
    if (x.rows() < n) {
        throw IllConditionedError("pseudo_inverse_left: " + x.shape_str() +
                                  " has fewer rows than columns, cannot have full column rank");
    }
    const Matrix xt = transpose(x);
    const Matrix gram = matmul(xt, x);
    Matrix lu = gram;
    std::vector<int> piv;
    if (!detail::lu_factor(lu, piv)) {
        throw IllConditionedError("pseudo_inverse_left: Gram matrix of " + x.shape_str() +
                                  " is singular (rank-deficient input)");
    }
    const double cond = detail::spd_condition_estimate(gram, lu, piv);
    if (!(cond <= 1e12)) {
        throw IllConditionedError("pseudo_inverse_left: Gram condition estimate " +
                                  std::to_string(cond) + " exceeds 1e12");
    }
    Matrix result(n, x.rows());
    std::vector<double> col(n);
    for (int j = 0; j < x.rows(); ++j) {
        for (int i = 0; i < n; ++i) col[i] = xt(i, j);
        const std::vector<double> sol = detail::lu_solve(lu, piv, col);
        for (int i = 0; i < n; ++i) result(i, j) = sol[i];
    }
    return result;
}

} // namespace equiseq
