#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "equiseq/coefficient_map.hpp"
#include "equiseq/errors.hpp"
#include "equiseq/linalg.hpp"
#include "equiseq/matrix.hpp"

namespace equiseq {

// Constructive equivariant forms. Any map assembled here depends on its
// inputs only through Gram blocks, so orthogonal equivariance in the
// embedding space holds by construction; the audit engine verifies it
// numerically.

/// f(X) = X g(X^T X): orthogonal equivariance without knowledge. The
/// coefficient map sees the n x n Gram matrix, so only length-free
/// parameterizations (identity A, identity product slots, kernels) fit.
struct Form1Map {
    CoefficientMap g;
};

inline Matrix apply_form1(const Form1Map& m, const Matrix& x) {
    return matmul(x, m.g.eval(matmul(transpose(x), x)));
}

/// The three Gram blocks a knowledge-carrying coefficient function may see.
struct GramBlocks {
    Matrix xtx; // X^T X, n x n
    Matrix ztx; // Z^T X, k x n
    Matrix ztz; // Z^T Z, k x k
};

inline GramBlocks gram_blocks(const Matrix& x, const Matrix& z) {
    if (x.rows() != z.rows()) {
        throw ShapeError("gram_blocks: X is " + x.shape_str() + " but Z is " + z.shape_str());
    }
    const Matrix zt = transpose(z);
    return GramBlocks{matmul(transpose(x), x), matmul(zt, x), matmul(zt, z)};
}

/// A coefficient function restricted to the Gram blocks by interface: it
/// never sees X or Z directly.
using BlockMap = std::function<Matrix(const GramBlocks&)>;

/// f(X, Z) = X g1(blocks) + Z g2(blocks) with caller-supplied block maps.
/// g1 must produce n x m, g2 (optional) k x m.
inline Matrix apply_form2_blocks(const Matrix& x, const Matrix& z, const BlockMap& g1,
                                 const BlockMap* g2 = nullptr) {
    const GramBlocks blocks = gram_blocks(x, z);
    Matrix out = matmul(x, g1(blocks));
    if (g2 != nullptr) {
        out = add(out, matmul(z, (*g2)(blocks)));
    }
    return out;
}

/// Declarative form-2 map. In the simplified variant g1 consumes Z^T X, the
/// self-attention pattern. In the general variant g1 and g2 each consume the
/// full combined Gram [[X^T X, X^T Z], [Z^T X, Z^T Z]]; g1 keeps the top-left
/// n x n coefficient block and g2 the bottom-left k x n block, mirroring the
/// split of g into first-n and last-k rows.
struct Form2Map {
    Matrix z; // the knowledge, d x k
    CoefficientMap g1;
    std::optional<CoefficientMap> g2;
    bool simplified = false;
};

inline Matrix apply_form2(const Form2Map& m, const Matrix& x) {
    if (x.rows() != m.z.rows()) {
        throw ShapeError("apply_form2: X is " + x.shape_str() + " but Z is " + m.z.shape_str());
    }
    if (m.simplified) {
        return matmul(x, m.g1.eval(matmul(transpose(m.z), x)));
    }
    const int n = x.cols();
    const int k = m.z.cols();
    BlockMap g1 = [&](const GramBlocks& b) {
        const Matrix gram = vstack(hstack(b.xtx, transpose(b.ztx)), hstack(b.ztx, b.ztz));
        return block(m.g1.eval(gram), 0, 0, n, n);
    };
    if (!m.g2.has_value()) {
        return apply_form2_blocks(x, m.z, g1);
    }
    BlockMap g2 = [&](const GramBlocks& b) {
        const Matrix gram = vstack(hstack(b.xtx, transpose(b.ztx)), hstack(b.ztx, b.ztz));
        return block(m.g2->eval(gram), n, 0, k, n);
    };
    return apply_form2_blocks(x, m.z, g1, &g2);
}

/// Single-head attention as a simplified form-2 map: Z = [W_Q^T, W_K^T] and
/// g1 the softmax-quadratic with the block matrix A = [[0, I], [0, 0]], so
/// that X^T Z A Z^T X = X^T W_Q^T W_K X. Output matches the attention product
/// X * weights with no residual and no value transform.
inline Form2Map attention_as_form2(const Matrix& wq, const Matrix& wk) {
    if (!wq.same_shape(wk)) {
        throw ShapeError("attention_as_form2: W_Q is " + wq.shape_str() + " but W_K is " +
                         wk.shape_str());
    }
    const int d1 = wq.rows();
    Matrix a(2 * d1, 2 * d1);
    for (int i = 0; i < d1; ++i) a(i, d1 + i) = 1.0;
    Form2Map m;
    m.z = hstack(transpose(wq), transpose(wk));
    m.g1 = CoefficientMap::softmax_quadratic(a, 1.0 / std::sqrt(static_cast<double>(d1)));
    m.simplified = true;
    return m;
}

/// The attention instantiation of the rho/psi decomposition: coefficients of
/// the softmax attention matrix assembled entry by entry, with off-element
/// contributions entering only through permutation-invariant psi sums.
struct RhoPsiAttention {
    Matrix wq; // d1 x d
    Matrix wk; // d1 x d
};

namespace detail {

/// Logits a_k = x_i^T W_Q^T W_K x_k for all k, for one fixed column i.
inline std::vector<double> attention_logits_for(const RhoPsiAttention& att, const Matrix& x,
                                                int i) {
    const int d = x.rows(), n = x.cols(), d1 = att.wq.rows();
    std::vector<double> qi(d1, 0.0);
    for (int r = 0; r < d1; ++r)
        for (int c = 0; c < d; ++c) qi[r] += att.wq(r, c) * x(c, i);
    std::vector<double> logits(n, 0.0);
    for (int k = 0; k < n; ++k) {
        double s = 0.0;
        for (int r = 0; r < d1; ++r) {
            double kk = 0.0;
            for (int c = 0; c < d; ++c) kk += att.wk(r, c) * x(c, k);
            s += qi[r] * kk;
        }
        logits[k] = s;
    }
    return logits;
}

} // namespace detail

/// Coefficient g_ij assembled from the rho/psi pieces (0-based i, j):
///   psi_2(x; y, z)   = e^{y^T W_Q^T W_K x}
///   rho_2(x, y, psi) = e^{x^T B y} / (e^{x^T B x} + e^{x^T B y} + psi)
///   psi_1 = psi_2 with y = z,  rho_1(x, psi) = e^{x^T B x} / (e^{x^T B x} + psi)
/// with B = W_Q^T W_K. All exponentials share one max shift, which leaves the
/// ratios unchanged. psi2_perturb is a fault-injection hook that offsets every
/// psi_2 summand.
inline double rho_psi_coefficient(const RhoPsiAttention& att, const Matrix& x, int i, int j,
                                  double psi2_perturb = 0.0) {
    const int n = x.cols();
    if (i < 0 || j < 0 || i >= n || j >= n) {
        throw InvalidInputError("rho_psi_coefficient: index (" + std::to_string(i) + "," +
                                std::to_string(j) + ") out of range for n=" + std::to_string(n));
    }
    const std::vector<double> logits = detail::attention_logits_for(att, x, i);
    double shift = logits[0];
    for (double v : logits) shift = std::max(shift, v);
    if (i == j) {
        double psi_sum = 0.0;
        for (int k = 0; k < n; ++k) {
            if (k == i) continue;
            psi_sum += std::exp(logits[k] - shift); // psi_1(x_k; x_i, Z)
        }
        const double self = std::exp(logits[i] - shift);
        return self / (self + psi_sum); // rho_1
    }
    double psi_sum = 0.0;
    for (int k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        psi_sum += std::exp(logits[k] - shift) + psi2_perturb; // psi_2(x_k; x_i, x_j, Z)
    }
    const double self = std::exp(logits[i] - shift);
    const double cross = std::exp(logits[j] - shift);
    return cross / (self + cross + psi_sum); // rho_2
}

/// Full n x n coefficient matrix assembled from rho_psi_coefficient.
inline Matrix rho_psi_matrix(const RhoPsiAttention& att, const Matrix& x,
                             double psi2_perturb = 0.0) {
    const int n = x.cols();
    Matrix g(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) g(i, j) = rho_psi_coefficient(att, x, i, j, psi2_perturb);
    return g;
}

/// Direct softmax attention coefficients g_ij = e^{x_i^T B x_j} / sum_k
/// e^{x_i^T B x_k}, the expression the rho/psi assembly must reproduce.
inline Matrix direct_attention_coefficients(const Matrix& wq, const Matrix& wk, const Matrix& x) {
    const Matrix b = matmul(transpose(wq), wk);
    return softmax_rows(matmul(transpose(x), matmul(b, x)));
}

/// Recover the coefficient block from observed outputs: g = X^dagger f(X,Z),
/// valid when X has full column rank and f's output lies in X's column span.
inline Matrix recover_g_from_f(const Matrix& x, const Matrix& f_output) {
    if (f_output.rows() != x.rows()) {
        throw ShapeError("recover_g_from_f: output is " + f_output.shape_str() +
                         " but X is " + x.shape_str());
    }
    return matmul(pseudo_inverse_left(x), f_output);
}

} // namespace equiseq
