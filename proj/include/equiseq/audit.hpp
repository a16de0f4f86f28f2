#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "equiseq/attention.hpp"
#include "equiseq/autodiff.hpp"
#include "equiseq/errors.hpp"
#include "equiseq/linalg.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/rng.hpp"

namespace equiseq {

// Property auditors: sample transformed inputs, measure the worst-coordinate
// residual of a symmetry claim, and report pass/fail against a tolerance.
// Trials draw from independent child streams (Rng::child_seed), so any trial
// is reproducible in isolation from its recorded seed and aggregation is
// order-independent.

enum class SymmetryKind { OrthogonalEmbedding, OrthogonalWithKnowledge, ElementwisePermutation };

inline std::string symmetry_name(SymmetryKind s) {
    switch (s) {
        case SymmetryKind::OrthogonalEmbedding: return "orthogonal_embedding";
        case SymmetryKind::OrthogonalWithKnowledge: return "orthogonal_with_knowledge";
        case SymmetryKind::ElementwisePermutation: return "elementwise_permutation";
    }
    return "?";
}

enum class InputDistribution { Gaussian, OneHot, UnitSphere };

inline std::string distribution_name(InputDistribution d) {
    switch (d) {
        case InputDistribution::Gaussian: return "gaussian";
        case InputDistribution::OneHot: return "one_hot";
        case InputDistribution::UnitSphere: return "unit_sphere";
    }
    return "?";
}

struct AuditConfig {
    std::pair<int, int> d_range{4, 4};
    std::pair<int, int> n_range{4, 4};
    std::pair<int, int> k_range{2, 2};
    int trials = 100;
    double tol = 1e-9;
    std::uint64_t seed = 0;
    InputDistribution distribution = InputDistribution::Gaussian;
};

struct AuditReport {
    SymmetryKind symmetry = SymmetryKind::OrthogonalEmbedding;
    double residual_max = 0.0;
    double residual_mean = 0.0;
    int trials_run = 0;
    std::uint64_t worst_seed = 0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Sequence sampler; one column per element.
inline Matrix sample_input(int d, int n, InputDistribution dist, Rng& rng) {
    switch (dist) {
        case InputDistribution::Gaussian:
            return rng.gaussian_matrix(d, n);
        case InputDistribution::OneHot: {
            Matrix x(d, n);
            for (int j = 0; j < n; ++j) x(static_cast<int>(rng.below(d)), j) = 1.0;
            return x;
        }
        case InputDistribution::UnitSphere: {
            Matrix x = rng.gaussian_matrix(d, n);
            for (int j = 0; j < n; ++j) {
                double norm = 0.0;
                for (int i = 0; i < d; ++i) norm += x(i, j) * x(i, j);
                norm = std::sqrt(norm);
                if (norm < 1e-12) {
                    x(0, j) = 1.0;
                    norm = 1.0;
                }
                for (int i = 0; i < d; ++i) x(i, j) /= norm;
            }
            return x;
        }
    }
    throw InvalidInputError("sample_input: unknown distribution");
}

/// A sequence map together with its knowledge action: factory(Q) must return
/// the map with all knowledge/weights transformed by the orthogonal Q.
using SequenceMap = std::function<Matrix(const Matrix&)>;
using KnowledgeFactory = std::function<SequenceMap(const Matrix& q)>;

namespace detail {

inline int sample_range(std::pair<int, int> range, Rng& rng) {
    if (range.first > range.second) std::swap(range.first, range.second);
    return rng.range(range.first, range.second);
}

/// A map that throws on a sampled input is recorded as a failed trial with a
/// huge finite residual, keeping reports JSON-representable.
constexpr double kTrialFailureResidual = 1e300;

template <typename TrialFn>
AuditReport run_trials(SymmetryKind symmetry, const AuditConfig& cfg, TrialFn&& trial) {
    if (cfg.trials < 1) throw InvalidInputError("audit: trials must be >= 1");
    if (!(cfg.tol > 0.0)) throw InvalidInputError("audit: tolerance must be positive");
    AuditReport report;
    report.symmetry = symmetry;
    report.tolerance = cfg.tol;
    double sum = 0.0;
    for (int t = 0; t < cfg.trials; ++t) {
        const std::uint64_t child_seed = Rng::child_seed(cfg.seed, static_cast<std::uint64_t>(t));
        double residual;
        try {
            Rng rng(child_seed);
            residual = trial(rng);
        } catch (const std::exception&) {
            residual = kTrialFailureResidual;
        }
        sum += residual;
        if (t == 0 || residual > report.residual_max) {
            report.residual_max = residual;
            report.worst_seed = child_seed;
        }
        ++report.trials_run;
    }
    report.residual_mean = sum / cfg.trials;
    report.pass = report.residual_max <= cfg.tol;
    return report;
}

} // namespace detail

/// One orthogonal-equivariance trial: |f(QX) - Q f(X)|_max on fresh X, Q.
inline double orthogonal_trial(const SequenceMap& f, const AuditConfig& cfg, Rng& rng) {
    const int d = detail::sample_range(cfg.d_range, rng);
    const int n = detail::sample_range(cfg.n_range, rng);
    const Matrix x = sample_input(d, n, cfg.distribution, rng);
    const Matrix q = random_orthogonal(d, rng);
    return max_abs_diff(f(matmul(q, x)), matmul(q, f(x)));
}

/// Orthogonal-equivariance audit: f(QX) = Q f(X) with the map held fixed.
inline AuditReport audit_orthogonal(const SequenceMap& f, const AuditConfig& cfg) {
    return detail::run_trials(SymmetryKind::OrthogonalEmbedding, cfg,
                              [&](Rng& rng) { return orthogonal_trial(f, cfg, rng); });
}

/// One joint-transform trial: |f_Q(QX) - Q f_I(X)|_max.
inline double orthogonal_with_knowledge_trial(const KnowledgeFactory& factory,
                                              const AuditConfig& cfg, Rng& rng) {
    const int d = detail::sample_range(cfg.d_range, rng);
    const int n = detail::sample_range(cfg.n_range, rng);
    const Matrix x = sample_input(d, n, cfg.distribution, rng);
    const Matrix q = random_orthogonal(d, rng);
    const SequenceMap base = factory(Matrix::identity(d));
    const SequenceMap transformed = factory(q);
    return max_abs_diff(transformed(matmul(q, x)), matmul(q, base(x)));
}

/// Joint-transform audit: f(QX, QZ) = Q f(X, Z); the factory rebinds the
/// knowledge alongside the input.
inline AuditReport audit_orthogonal_with_knowledge(const KnowledgeFactory& factory,
                                                   const AuditConfig& cfg) {
    return detail::run_trials(SymmetryKind::OrthogonalWithKnowledge, cfg, [&](Rng& rng) {
        return orthogonal_with_knowledge_trial(factory, cfg, rng);
    });
}

/// One permutation trial: |f(XP) - f(X)P|_max.
inline double permutation_trial(const SequenceMap& f, const AuditConfig& cfg, Rng& rng) {
    const int d = detail::sample_range(cfg.d_range, rng);
    const int n = detail::sample_range(cfg.n_range, rng);
    const Matrix x = sample_input(d, n, cfg.distribution, rng);
    const Matrix p = random_permutation(n, rng);
    return max_abs_diff(f(matmul(x, p)), matmul(f(x), p));
}

/// Permutation-equivariance audit: f(XP) = f(X) P for length-preserving maps.
inline AuditReport audit_permutation(const SequenceMap& f, const AuditConfig& cfg) {
    return detail::run_trials(SymmetryKind::ElementwisePermutation, cfg,
                              [&](Rng& rng) { return permutation_trial(f, cfg, rng); });
}

/// Replays a single audit trial from its recorded child seed.
inline double rerun_orthogonal_trial(const SequenceMap& f, const AuditConfig& cfg,
                                     std::uint64_t child_seed) {
    Rng rng(child_seed);
    return orthogonal_trial(f, cfg, rng);
}

inline double rerun_orthogonal_with_knowledge_trial(const KnowledgeFactory& factory,
                                                    const AuditConfig& cfg,
                                                    std::uint64_t child_seed) {
    Rng rng(child_seed);
    return orthogonal_with_knowledge_trial(factory, cfg, rng);
}

inline double rerun_permutation_trial(const SequenceMap& f, const AuditConfig& cfg,
                                      std::uint64_t child_seed) {
    Rng rng(child_seed);
    return permutation_trial(f, cfg, rng);
}

// ---------------------------------------------------------------------------
// The arithmetic counterexample: a rule-table seq2seq function in a fixed
// one-hot embedding is not orthogonal equivariant, because swapping the "+"
// and "-" axes turns a correct evaluation into a wrong one.

/// Single-digit arithmetic in a fixed one-hot embedding over 12 symbols:
/// "+" -> e1, "-" -> e2, "0" -> e3, ..., "9" -> e12. The rule table covers
/// expressions "a op b" whose result is a single non-negative digit;
/// everything else is outside the fixture.
struct ArithmeticTask {
    static constexpr int vocab = 12;

    static int token_index(char c) {
        if (c == '+') return 0;
        if (c == '-') return 1;
        if (c >= '0' && c <= '9') return 2 + (c - '0');
        throw InvalidInputError(std::string("ArithmeticTask: unknown token '") + c + "'");
    }

    static char token_at(int index) {
        static const char* symbols = "+-0123456789";
        if (index < 0 || index >= vocab) {
            throw InvalidInputError("ArithmeticTask: index " + std::to_string(index) +
                                    " outside vocabulary");
        }
        return symbols[index];
    }

    /// One-hot embedding of an expression string, one column per token.
    static Matrix embed(const std::string& expr) {
        Matrix x(vocab, static_cast<int>(expr.size()));
        for (std::size_t j = 0; j < expr.size(); ++j) {
            x(token_index(expr[j]), static_cast<int>(j)) = 1.0;
        }
        return x;
    }

    /// The target function on embedded expressions [digit, op, digit].
    static Matrix apply(const Matrix& x) {
        if (x.rows() != vocab || x.cols() != 3) {
            throw InvalidInputError("ArithmeticTask: expected a 12 x 3 one-hot sequence, got " +
                                    x.shape_str());
        }
        char tokens[3];
        for (int j = 0; j < 3; ++j) {
            int hot = -1;
            for (int i = 0; i < vocab; ++i) {
                if (x(i, j) == 1.0 && hot < 0) {
                    hot = i;
                } else if (x(i, j) != 0.0 && x(i, j) != 1.0) {
                    throw InvalidInputError("ArithmeticTask: column " + std::to_string(j) +
                                            " is not one-hot");
                }
            }
            if (hot < 0) {
                throw InvalidInputError("ArithmeticTask: column " + std::to_string(j) +
                                        " has no active token");
            }
            tokens[j] = token_at(hot);
        }
        if (tokens[0] < '0' || tokens[0] > '9' || tokens[2] < '0' || tokens[2] > '9' ||
            (tokens[1] != '+' && tokens[1] != '-')) {
            throw InvalidInputError(std::string("ArithmeticTask: malformed expression \"") +
                                    tokens[0] + tokens[1] + tokens[2] + "\"");
        }
        const int a = tokens[0] - '0', b = tokens[2] - '0';
        const int result = (tokens[1] == '+') ? a + b : a - b;
        if (result < 0 || result > 9) {
            throw InvalidInputError(std::string("ArithmeticTask: \"") + tokens[0] + tokens[1] +
                                    tokens[2] + "\" falls outside the single-digit rule table");
        }
        Matrix out(vocab, 1);
        out(token_index(static_cast<char>('0' + result)), 0) = 1.0;
        return out;
    }
};

/// Evaluates the rule table on "2+1" and on its image under the orthogonal
/// swap of the "+"/"-" axes. The swapped input reads "2-1", whose correct
/// value e4 ("1") differs from the equivariance prediction e6 ("3"): the
/// residual is exactly 1 and the audit fails by construction.
inline AuditReport arithmetic_counterexample(double tol = 1e-2) {
    Matrix x = ArithmeticTask::embed("2+1");
    Matrix q12 = Matrix::identity(ArithmeticTask::vocab);
    q12(0, 0) = 0.0;
    q12(1, 1) = 0.0;
    q12(0, 1) = 1.0;
    q12(1, 0) = 1.0;

    const Matrix lhs = ArithmeticTask::apply(matmul(q12, x)); // f(Q X) = "1" -> e4
    const Matrix rhs = matmul(q12, ArithmeticTask::apply(x)); // Q f(X) = Q e6 = e6
    const double residual = max_abs_diff(lhs, rhs);

    AuditReport report;
    report.symmetry = SymmetryKind::OrthogonalEmbedding;
    report.residual_max = residual;
    report.residual_mean = residual;
    report.trials_run = 1;
    report.worst_seed = 0;
    report.tolerance = tol;
    report.pass = residual <= tol;
    return report;
}

// ---------------------------------------------------------------------------
// Gradient audit: analytic reverse pass vs central finite differences.

enum class LossKind { HalfSquaredError };

struct GradCheckReport {
    int trials = 0;
    double step = 0.0;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    std::string worst_param;
    bool pass = false;
};

/// Central-difference check of every parameter of the model at `trials`
/// random inputs. Relative error uses max(|analytic|, |numeric|, 1e-8) as
/// denominator; pass iff the worst parameter stays below tol.
inline GradCheckReport grad_check(const ModelSpec& model, LossKind loss, const Matrix& target,
                                  int trials, double step, double tol, std::uint64_t seed = 0) {
    if (loss != LossKind::HalfSquaredError) {
        throw InvalidInputError("grad_check: unsupported loss kind");
    }
    GradCheckReport report;
    report.trials = trials;
    report.step = step;
    report.tolerance = tol;

    for (int t = 0; t < trials; ++t) {
        Rng rng(Rng::child_seed(seed, static_cast<std::uint64_t>(t)));
        const Matrix x = rng.gaussian_matrix(model.d, target.cols());

        ForwardResult fr = forward(model, x);
        std::vector<Matrix> analytic = backward(fr, half_squared_error_grad(fr.output, target));
        for (std::size_t p = 0; p < analytic.size(); ++p) {
            if (!analytic[p].all_finite()) {
                throw InvalidInputError("grad_check: non-finite gradient for " +
                                        fr.params[p].name);
            }
        }

        ModelSpec probe = model;
        std::vector<std::pair<std::string, Matrix*>> slots;
        visit_params(probe, [&](const std::string& name, Matrix& m) {
            slots.push_back({name, &m});
        });
        for (std::size_t p = 0; p < slots.size(); ++p) {
            Matrix& m = *slots[p].second;
            for (int i = 0; i < m.rows(); ++i) {
                for (int j = 0; j < m.cols(); ++j) {
                    const double saved = m(i, j);
                    m(i, j) = saved + step;
                    const double up = half_squared_error(forward(probe, x).output, target);
                    m(i, j) = saved - step;
                    const double down = half_squared_error(forward(probe, x).output, target);
                    m(i, j) = saved;
                    const double numeric = (up - down) / (2.0 * step);
                    const double a = analytic[p](i, j);
                    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
                    const double rel = std::abs(a - numeric) / denom;
                    if (rel > report.max_rel_error) {
                        report.max_rel_error = rel;
                        report.worst_param = slots[p].first;
                    }
                }
            }
        }
    }
    report.pass = report.max_rel_error < tol;
    return report;
}

} // namespace equiseq
