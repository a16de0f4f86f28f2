#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "equiseq/errors.hpp"
#include "equiseq/linalg.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/nonlinearity.hpp"

namespace equiseq {

// Coefficient functions g mapping Y (k x n) to an n x n coefficient matrix.
// Parameter shapes are fixed by k alone, never by the sequence length n, so
// one map serves sequences of every length.

/// One matrix-product term W_0 * prod_j (Y~ W_j), with Y~ either Y or Y^T.
/// A weight slot left empty stands for the identity: it adapts its dimension
/// to the chain and carries no parameters.
struct TermSpec {
    std::vector<bool> transposed;               // per factor j = 1..K
    std::vector<std::optional<Matrix>> weights; // W_0 .. W_K

    int order() const { return static_cast<int>(transposed.size()); }
};

inline TermSpec make_term(std::vector<bool> transposed, std::vector<std::optional<Matrix>> weights) {
    if (weights.size() != transposed.size() + 1) {
        throw ShapeError("TermSpec: " + std::to_string(transposed.size()) + " factors need " +
                         std::to_string(transposed.size() + 1) + " weight slots, got " +
                         std::to_string(weights.size()));
    }
    return TermSpec{std::move(transposed), std::move(weights)};
}

/// Outcome of symbolic shape validation for one term.
struct ShapeReport {
    bool accepted = false;
    std::string reason;        // empty when accepted
    int offending_weight = -1; // index into weights, or -1 when K itself offends
};

namespace detail {

// Symbolic dimension: either a concrete integer or the free symbol n.
struct SymDim {
    bool is_n = false;
    int value = 0;

    static SymDim n() { return {true, 0}; }
    static SymDim fixed(int v) { return {false, v}; }
    bool matches(const SymDim& o) const { return is_n == o.is_n && (is_n || value == o.value); }
    std::string str() const { return is_n ? "n" : std::to_string(value); }
};

} // namespace detail

/// Symbolic shape inference for a matrix-product term with the sequence
/// length n left free. Accepts iff the term composes for every n, yields an
/// n x n output, and no explicit weight would need an n-dependent shape.
/// Terms of order 0 or 1 are rejected outright: their output can only reach
/// shape n x n through n-dependent weights.
inline ShapeReport validate_term_shapes(const TermSpec& term, int k) {
    using detail::SymDim;
    const int order = term.order();
    if (term.weights.size() != static_cast<std::size_t>(order) + 1) {
        return {false, "term has " + std::to_string(order) + " factors but " +
                       std::to_string(term.weights.size()) + " weight slots", -1};
    }
    if (order < 2) {
        return {false, "K=" + std::to_string(order) +
                       ": constant and linear terms cannot have shape n x n "
                       "without n-dependent weights", -1};
    }

    bool neutral = true; // no explicit factor consumed yet
    SymDim rows, cols;

    auto feed = [&](SymDim mr, SymDim mc, int widx,
                    const std::string& desc) -> std::optional<ShapeReport> {
        if (neutral) {
            rows = mr;
            cols = mc;
            neutral = false;
            return std::nullopt;
        }
        if (!cols.matches(mr)) {
            std::string reason = desc + " has " + mr.str() + " rows but the chain provides " +
                                 cols.str() + " columns";
            if (cols.is_n || mr.is_n) {
                reason += "; bridging would take an n-dependent weight, violating the finite "
                          "information principle";
            }
            return ShapeReport{false, reason, widx};
        }
        cols = mc;
        return std::nullopt;
    };

    int last_explicit = 0;
    for (int j = 0; j <= order; ++j) {
        if (term.weights[j].has_value()) {
            const Matrix& w = *term.weights[j];
            if (auto r = feed(SymDim::fixed(w.rows()), SymDim::fixed(w.cols()), j,
                              "weight " + std::to_string(j))) {
                return *r;
            }
            last_explicit = j;
        }
        if (j < order) {
            const bool t = term.transposed[j];
            const SymDim yr = t ? SymDim::n() : SymDim::fixed(k);
            const SymDim yc = t ? SymDim::fixed(k) : SymDim::n();
            // a Y-factor mismatch is pinned on the preceding explicit weight
            if (auto r = feed(yr, yc, last_explicit,
                              t ? std::string("factor Y^T") : std::string("factor Y"))) {
                return *r;
            }
        }
    }
    if (!rows.is_n || !cols.is_n) {
        return {false, "term output has shape " + rows.str() + "x" + cols.str() +
                       ", not n x n", -1};
    }
    return {true, "", -1};
}

/// sigma(scale * Y^T A Y), the quadratic coefficient family.
inline Matrix eval_quadratic(const Matrix& y, const Matrix& a, Nonlinearity nl, double scale) {
    if (a.rows() != a.cols() || a.rows() != y.rows()) {
        throw ShapeError("eval_quadratic: A is " + a.shape_str() + ", Y is " + y.shape_str());
    }
    Matrix t = matmul(transpose(y), matmul(a, y));
    if (scale != 1.0) t = equiseq::scale(t, scale);
    return sigma_apply(nl, t);
}

/// Softmax coefficient family: softmax over rows of scale * Y^T A Y, returned
/// transposed so that applying a form is always X * g(Y) with no caller-side
/// transpose. Columns of the result sum to 1.
inline Matrix eval_softmax_quadratic(const Matrix& y, const Matrix& a, double scale) {
    if (a.rows() != a.cols() || a.rows() != y.rows()) {
        throw ShapeError("eval_softmax_quadratic: A is " + a.shape_str() + ", Y is " + y.shape_str());
    }
    Matrix t = matmul(transpose(y), matmul(a, y));
    if (scale != 1.0) t = equiseq::scale(t, scale);
    return transpose(softmax_rows(t));
}

/// Evaluate one validated matrix-product term at a concrete Y.
inline Matrix eval_term(const TermSpec& term, const Matrix& y) {
    const ShapeReport report = validate_term_shapes(term, y.rows());
    if (!report.accepted) {
        throw FiniteInformationError("matrix-product term rejected: " + report.reason);
    }
    const Matrix yt = transpose(y);
    std::optional<Matrix> acc;
    auto feed = [&](const Matrix& m) {
        acc = acc.has_value() ? matmul(*acc, m) : m;
    };
    for (int j = 0; j <= term.order(); ++j) {
        if (term.weights[j].has_value()) feed(*term.weights[j]);
        if (j < term.order()) feed(term.transposed[j] ? yt : y);
    }
    return *acc;
}

/// sigma( sum_i W_{i,0} prod_j Y~ W_{i,j} ), the matrix-product family.
inline Matrix eval_matrix_product(const Matrix& y, const std::vector<TermSpec>& terms,
                                  Nonlinearity nl) {
    const int n = y.cols();
    Matrix sum(n, n);
    for (const TermSpec& term : terms) {
        sum = add(sum, eval_term(term, y));
    }
    return sigma_apply(nl, sum);
}

/// RBF kernel coefficients g_ij = exp(-gamma * |y_i - y_j|^2) over the
/// columns of Y. Symmetric with unit diagonal.
inline Matrix eval_rbf(const Matrix& y, double gamma) {
    if (!(gamma > 0.0)) {
        throw InvalidInputError("eval_rbf: bandwidth gamma must be positive, got " +
                                std::to_string(gamma));
    }
    const int n = y.cols();
    Matrix g(n, n);
    for (int i = 0; i < n; ++i) {
        g(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            double dist_sq = 0.0;
            for (int r = 0; r < y.rows(); ++r) {
                const double diff = y(r, i) - y(r, j);
                dist_sq += diff * diff;
            }
            const double v = std::exp(-gamma * dist_sq);
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

/// Inner-product kernel coefficients sigma(Y^T Y).
inline Matrix eval_inner_product_kernel(const Matrix& y, Nonlinearity nl) {
    return sigma_apply(nl, matmul(transpose(y), y));
}

enum class MapKind { SoftmaxQuadratic, ElementwiseQuadratic, MatrixProduct, RbfKernel, InnerProductKernel };

inline std::string map_kind_name(MapKind kind) {
    switch (kind) {
        case MapKind::SoftmaxQuadratic: return "softmax_quadratic";
        case MapKind::ElementwiseQuadratic: return "elementwise_quadratic";
        case MapKind::MatrixProduct: return "matrix_product";
        case MapKind::RbfKernel: return "rbf_kernel";
        case MapKind::InnerProductKernel: return "inner_product_kernel";
    }
    return "?";
}

/// A parameterized coefficient map. The quadratic kinds accept either an
/// explicit k x k matrix A or, when A is left empty, the identity, which
/// adapts to any input height. Scale is either a fixed scalar or the
/// deferred value 1/sqrt(k) resolved against the input height at call time.
class CoefficientMap {
public:
    static CoefficientMap softmax_quadratic(std::optional<Matrix> a = std::nullopt,
                                            std::optional<double> scale = std::nullopt) {
        CoefficientMap m;
        m.kind_ = MapKind::SoftmaxQuadratic;
        m.a_ = std::move(a);
        m.scale_ = scale;
        return m;
    }

    static CoefficientMap quadratic(std::optional<Matrix> a, Nonlinearity nl, double scale = 1.0) {
        CoefficientMap m;
        m.kind_ = MapKind::ElementwiseQuadratic;
        m.a_ = std::move(a);
        m.sigma_ = nl;
        m.scale_ = scale;
        return m;
    }

    static CoefficientMap matrix_product(std::vector<TermSpec> terms, Nonlinearity nl) {
        CoefficientMap m;
        m.kind_ = MapKind::MatrixProduct;
        m.terms_ = std::move(terms);
        m.sigma_ = nl;
        return m;
    }

    static CoefficientMap rbf(double gamma) {
        if (!(gamma > 0.0)) {
            throw InvalidInputError("CoefficientMap::rbf: gamma must be positive");
        }
        CoefficientMap m;
        m.kind_ = MapKind::RbfKernel;
        m.gamma_ = gamma;
        return m;
    }

    static CoefficientMap inner_product(Nonlinearity nl) {
        CoefficientMap m;
        m.kind_ = MapKind::InnerProductKernel;
        m.sigma_ = nl;
        return m;
    }

    MapKind kind() const { return kind_; }
    Nonlinearity nonlinearity() const { return sigma_; }
    const std::optional<Matrix>& a() const { return a_; }
    std::optional<Matrix>& a() { return a_; }
    const std::vector<TermSpec>& terms() const { return terms_; }
    double gamma() const { return gamma_; }
    const std::optional<double>& scale() const { return scale_; }

    /// Scale resolved against the input height k: explicit value if set,
    /// otherwise 1/sqrt(k) (the softmax default); 1 for non-quadratic kinds.
    double resolve_scale(int k) const {
        if (scale_.has_value()) return *scale_;
        if (kind_ == MapKind::SoftmaxQuadratic) return 1.0 / std::sqrt(static_cast<double>(k));
        return 1.0;
    }

    Matrix a_or_identity(int k) const { return a_.has_value() ? *a_ : Matrix::identity(k); }

    /// Apply the map: Y (k x n) -> n x n.
    Matrix eval(const Matrix& y) const {
        const int k = y.rows();
        switch (kind_) {
            case MapKind::SoftmaxQuadratic:
                return eval_softmax_quadratic(y, a_or_identity(k), resolve_scale(k));
            case MapKind::ElementwiseQuadratic:
                return eval_quadratic(y, a_or_identity(k), sigma_, resolve_scale(k));
            case MapKind::MatrixProduct:
                return eval_matrix_product(y, terms_, sigma_);
            case MapKind::RbfKernel:
                return eval_rbf(y, gamma_);
            case MapKind::InnerProductKernel:
                return eval_inner_product_kernel(y, sigma_);
        }
        throw InvalidInputError("CoefficientMap::eval: unknown kind");
    }

private:
    MapKind kind_ = MapKind::InnerProductKernel;
    Nonlinearity sigma_ = Nonlinearity::Identity;
    std::optional<Matrix> a_;
    std::vector<TermSpec> terms_;
    double gamma_ = 1.0;
    std::optional<double> scale_;
};

} // namespace equiseq
