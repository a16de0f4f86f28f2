#include <cmath>
#include <optional>
#include <vector>

#include <gtest/gtest.h>

#include "equiseq/coefficient_map.hpp"
#include "equiseq/forms.hpp"
#include "equiseq/linalg.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/rng.hpp"
#include "test_util.hpp"

using namespace equiseq;
using equiseq::test::matmul_oracle;
using equiseq::test::random_matrix;

TEST(ApplyForm1, IdentityCoefficientsReturnInput) {
    // orthonormal columns make X^T X = I, so the inner-product kernel with
    // identity sigma returns the identity coefficient block and f(X) = X
    Matrix x(3, 2, {1, 0, 0, 1, 0, 0});
    Form1Map m{CoefficientMap::inner_product(Nonlinearity::Identity)};
    EXPECT_TRUE(exactly_equal(apply_form1(m, x), x));
}

TEST(ApplyForm1, MatchesTwoStepLoopOracle) {
    Rng rng(3);
    Matrix x = random_matrix(3, 4, rng);
    Form1Map m{CoefficientMap::quadratic(std::nullopt, Nonlinearity::Tanh)};
    Matrix got = apply_form1(m, x);

    Matrix gram = matmul_oracle(transpose(x), x);
    Matrix coeff = sigma_apply(Nonlinearity::Tanh, matmul_oracle(gram, gram));
    EXPECT_LE(max_abs_diff(got, matmul_oracle(x, coeff)), 1e-10);
}

TEST(ApplyForm1, OrthogonalEquivariance) {
    Rng rng(7);
    std::vector<Form1Map> maps = {
        {CoefficientMap::softmax_quadratic()},
        {CoefficientMap::quadratic(std::nullopt, Nonlinearity::Tanh)},
        {CoefficientMap::rbf(0.6)},
        {CoefficientMap::inner_product(Nonlinearity::Tanh)},
    };
    for (const auto& m : maps) {
        for (int trial = 0; trial < 10; ++trial) {
            const int d = rng.range(1, 8), n = rng.range(1, 8);
            Matrix x = random_matrix(d, n, rng);
            Matrix q = random_orthogonal(d, rng);
            Matrix lhs = apply_form1(m, matmul(q, x));
            Matrix rhs = matmul(q, apply_form1(m, x));
            EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
        }
    }
}

TEST(ApplyForm2Blocks, KnowledgeOnlyTermIgnoresX) {
    // g1 = 0, g2 = all-ones: output is Z * ones, independent of X
    Rng rng(11);
    const int d = 3, n = 4, k = 2;
    Matrix z = random_matrix(d, k, rng);
    BlockMap g1 = [&](const GramBlocks&) { return Matrix(n, n); };
    BlockMap g2 = [&](const GramBlocks&) { return Matrix::filled(k, n, 1.0); };
    Matrix xa = random_matrix(d, n, rng);
    Matrix xb = random_matrix(d, n, rng);
    Matrix expected = matmul(z, Matrix::filled(k, n, 1.0));
    EXPECT_LE(max_abs_diff(apply_form2_blocks(xa, z, g1, &g2), expected), 1e-12);
    EXPECT_LE(max_abs_diff(apply_form2_blocks(xb, z, g1, &g2), expected), 1e-12);
}

TEST(ApplyForm2, SimplifiedSoftmaxMatchesAttentionProduct) {
    // with Z = [W_Q^T, W_K^T] and the block A, the simplified form equals the
    // attention product X * softmax_rows(scale * X^T W_Q^T W_K X)^T
    Rng rng(13);
    const int d = 3, n = 4, d1 = 2;
    Matrix wq = random_matrix(d1, d, rng);
    Matrix wk = random_matrix(d1, d, rng);
    Matrix x = random_matrix(d, n, rng);
    Form2Map m = attention_as_form2(wq, wk);
    Matrix got = apply_form2(m, x);

    Matrix logits = matmul(transpose(x), matmul(matmul(transpose(wq), wk), x));
    Matrix weights = softmax_rows(scale(logits, 1.0 / std::sqrt(static_cast<double>(d1))));
    Matrix expected = matmul(x, transpose(weights));
    EXPECT_LE(max_abs_diff(got, expected), 1e-12);
}

TEST(ApplyForm2, GeneralFormMatchesExplicitBlockAssembly) {
    Rng rng(17);
    const int d = 4, n = 3, k = 2;
    Matrix x = random_matrix(d, n, rng);
    Matrix z = random_matrix(d, k, rng);
    Form2Map m;
    m.z = z;
    m.g1 = CoefficientMap::inner_product(Nonlinearity::Tanh);
    m.g2 = CoefficientMap::rbf(0.5);

    // oracle: assemble the three Gram blocks explicitly with loop products,
    // build the combined Gram, evaluate each map, slice, and combine
    Matrix xtx = matmul_oracle(transpose(x), x);
    Matrix ztx = matmul_oracle(transpose(z), x);
    Matrix ztz = matmul_oracle(transpose(z), z);
    Matrix gram = vstack(hstack(xtx, transpose(ztx)), hstack(ztx, ztz));
    Matrix g1_full = m.g1.eval(gram);
    Matrix g2_full = m.g2->eval(gram);
    Matrix expected = add(matmul_oracle(x, block(g1_full, 0, 0, n, n)),
                          matmul_oracle(z, block(g2_full, n, 0, k, n)));
    EXPECT_LE(max_abs_diff(apply_form2(m, x), expected), 1e-12);
}

TEST(ApplyForm2, JointOrthogonalEquivariance) {
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        const int d = rng.range(1, 8), n = rng.range(1, 6), k = rng.range(1, 4);
        Matrix x = random_matrix(d, n, rng);
        Matrix z = random_matrix(d, k, rng);
        Matrix q = random_orthogonal(d, rng);

        Form2Map general;
        general.z = z;
        general.g1 = CoefficientMap::softmax_quadratic();
        general.g2 = CoefficientMap::inner_product(Nonlinearity::Tanh);

        Form2Map transformed = general;
        transformed.z = matmul(q, z);

        Matrix lhs = apply_form2(transformed, matmul(q, x));
        Matrix rhs = matmul(q, apply_form2(general, x));
        EXPECT_LE(max_abs_diff(lhs, rhs), 1e-10);
    }
}

TEST(AttentionAsForm2, IdentityWeightsGiveGramLogits) {
    // W_Q = W_K = I: Z A Z^T = I, so the inner matrix is X^T X
    const int d = 3;
    Form2Map m = attention_as_form2(Matrix::identity(d), Matrix::identity(d));
    Matrix a(2 * d, 2 * d);
    for (int i = 0; i < d; ++i) a(i, d + i) = 1.0;
    Matrix zazt = matmul(m.z, matmul(a, transpose(m.z)));
    EXPECT_LE(max_abs_diff(zazt, Matrix::identity(d)), 1e-15);
}

TEST(AttentionAsForm2, BlockIdentityBothSides) {
    // X^T Z A Z^T X == X^T W_Q^T W_K X, both sides evaluated directly
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 3, n = 4, d1 = rng.range(1, 4);
        Matrix wq = random_matrix(d1, d, rng);
        Matrix wk = random_matrix(d1, d, rng);
        Matrix x = random_matrix(d, n, rng);
        Form2Map m = attention_as_form2(wq, wk);
        Matrix a(2 * d1, 2 * d1);
        for (int i = 0; i < d1; ++i) a(i, d1 + i) = 1.0;

        Matrix lhs = matmul(transpose(x), matmul(matmul(m.z, matmul(a, transpose(m.z))), x));
        Matrix rhs = matmul(transpose(x), matmul(matmul(transpose(wq), wk), x));
        EXPECT_LE(max_abs_diff(lhs, rhs), 1e-13);
    }
}

TEST(AttentionAsForm2, RankOneWeights) {
    // d1 = 1, w_q = w_k = e_1^T: logits are the outer product of the first
    // coordinates of the columns
    const int d = 3, n = 3;
    Matrix w(1, d);
    w(0, 0) = 1.0;
    Rng rng(29);
    Matrix x = random_matrix(d, n, rng);
    Form2Map m = attention_as_form2(w, w);
    Matrix a(2, 2);
    a(0, 1) = 1.0;
    Matrix inner = matmul(transpose(x), matmul(matmul(m.z, matmul(a, transpose(m.z))), x));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) EXPECT_NEAR(inner(i, j), x(0, i) * x(0, j), 1e-13);
}

TEST(AttentionAsForm2, MismatchedWeightShapesRejected) {
    EXPECT_THROW(attention_as_form2(Matrix(2, 3), Matrix(3, 3)), ShapeError);
}

TEST(RhoPsi, SingleElementCoefficientIsOne) {
    Rng rng(31);
    RhoPsiAttention att{random_matrix(2, 3, rng), random_matrix(2, 3, rng)};
    Matrix x = random_matrix(3, 1, rng);
    EXPECT_DOUBLE_EQ(rho_psi_coefficient(att, x, 0, 0), 1.0);
}

TEST(RhoPsi, ZeroWeightsGiveUniformCoefficients) {
    Rng rng(37);
    const int n = 5;
    RhoPsiAttention att{Matrix(2, 3), Matrix(2, 3)};
    Matrix x = random_matrix(3, n, rng);
    Matrix g = rho_psi_matrix(att, x);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) EXPECT_NEAR(g(i, j), 1.0 / n, 1e-15);
}

TEST(RhoPsi, MatchesDirectSoftmaxFormula) {
    Rng rng(41);
    RhoPsiAttention att{random_matrix(2, 2, rng), random_matrix(2, 2, rng)};
    Matrix x = random_matrix(2, 3, rng);
    Matrix assembled = rho_psi_matrix(att, x);
    Matrix direct = direct_attention_coefficients(att.wq, att.wk, x);
    EXPECT_LE(max_abs_diff(assembled, direct), 1e-12);
}

TEST(RhoPsi, ConsistencyAcrossSizes) {
    Rng rng(43);
    for (int d = 1; d <= 8; d *= 2) {
        for (int n = 1; n <= 8; n += (n < 3 ? 1 : 5)) {
            const int d1 = std::max(1, d / 2);
            RhoPsiAttention att{random_matrix(d1, d, rng), random_matrix(d1, d, rng)};
            Matrix x = random_matrix(d, n, rng);
            EXPECT_LE(max_abs_diff(rho_psi_matrix(att, x),
                                   direct_attention_coefficients(att.wq, att.wk, x)),
                      1e-12)
                << "d=" << d << " n=" << n;
        }
    }
}

TEST(RhoPsi, SharedShiftSurvivesLargeLogits) {
    // logits around +/- 700 overflow the raw exponentials; the shifted
    // assembly must still match the (equally shifted) direct softmax
    Matrix x(1, 3, {40.0, -40.0, 10.0});
    RhoPsiAttention att{Matrix(1, 1, {1.0}), Matrix(1, 1, {1.0})};
    Matrix g = rho_psi_matrix(att, x);
    EXPECT_TRUE(g.all_finite());
    EXPECT_LE(max_abs_diff(g, direct_attention_coefficients(att.wq, att.wk, x)), 1e-12);
}

TEST(RhoPsi, IndexOutOfRangeRejected) {
    Rng rng(47);
    RhoPsiAttention att{random_matrix(1, 2, rng), random_matrix(1, 2, rng)};
    Matrix x = random_matrix(2, 3, rng);
    EXPECT_THROW(rho_psi_coefficient(att, x, 3, 0), InvalidInputError);
    EXPECT_THROW(rho_psi_coefficient(att, x, 0, -1), InvalidInputError);
}

TEST(RhoPsi, PerturbationHookBreaksConsistency) {
    Rng rng(53);
    RhoPsiAttention att{random_matrix(2, 3, rng), random_matrix(2, 3, rng)};
    Matrix x = random_matrix(3, 4, rng);
    Matrix clean = rho_psi_matrix(att, x);
    Matrix dirty = rho_psi_matrix(att, x, 0.25);
    EXPECT_GT(max_abs_diff(clean, dirty), 1e-6);
}

TEST(RecoverG, IdentityWhenOutputEqualsInput) {
    Rng rng(59);
    Matrix x = random_matrix(5, 3, rng);
    EXPECT_LE(max_abs_diff(recover_g_from_f(x, x), Matrix::identity(3)), 1e-8);
}

TEST(RecoverG, RoundTripsForm1Coefficients) {
    Rng rng(61);
    Matrix x = random_matrix(5, 3, rng);
    Form1Map m{CoefficientMap::inner_product(Nonlinearity::Tanh)};
    Matrix f = apply_form1(m, x);
    Matrix recovered = recover_g_from_f(x, f);
    Matrix expected = m.g.eval(matmul(transpose(x), x));
    EXPECT_LE(max_abs_diff(recovered, expected), 1e-8);
}

TEST(RecoverG, ExactForOrthonormalColumns) {
    Matrix x(3, 2, {0, 1, 1, 0, 0, 0});
    Rng rng(67);
    Matrix f = random_matrix(3, 4, rng);
    EXPECT_TRUE(exactly_equal(recover_g_from_f(x, f), matmul(transpose(x), f)));
}

TEST(RecoverG, PermutationConjugation) {
    // for simplified form-2 maps, permuting the input permutes the recovered
    // coefficient block on both sides: g(XP) = P^T g(X) P
    Rng rng(71);
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 6, n = 4, k = 2;
        Matrix x = random_matrix(d, n, rng);
        Matrix z = random_matrix(d, k, rng);
        Matrix p = random_permutation(n, rng);
        Form2Map m;
        m.z = z;
        m.g1 = CoefficientMap::softmax_quadratic(random_matrix(k, k, rng));
        m.simplified = true;

        Matrix g_x = recover_g_from_f(x, apply_form2(m, x));
        Matrix xp = matmul(x, p);
        Matrix g_xp = recover_g_from_f(xp, apply_form2(m, xp));
        Matrix conjugated = matmul(transpose(p), matmul(g_x, p));
        EXPECT_LE(max_abs_diff(g_xp, conjugated), 1e-8);
    }
}
