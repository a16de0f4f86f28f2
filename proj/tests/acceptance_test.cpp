// Acceptance suite: one test and one printed pass/fail line per criterion.
// Tolerances and budgets are pinned in the assertions themselves.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <gtest/gtest.h>

#include "equiseq/equiseq.hpp"

using namespace equiseq;
namespace fs = std::filesystem;

namespace {

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[criterion %02d] %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    EXPECT_TRUE(pass) << "criterion " << criterion << ": " << detail;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.3g", v);
    return buffer;
}

// --- coefficient-map fixtures -------------------------------------------------

/// Length-free parameterizations, usable when the map consumes a Gram block
/// whose height varies with n.
CoefficientMap polymorphic_map(int kind) {
    switch (kind) {
        case 0: return CoefficientMap::softmax_quadratic();
        case 1: return CoefficientMap::quadratic(std::nullopt, Nonlinearity::Tanh);
        case 2:
            return CoefficientMap::matrix_product(
                {make_term({true, false}, {std::nullopt, std::nullopt, std::nullopt})},
                Nonlinearity::Tanh);
        case 3: return CoefficientMap::rbf(1.0);
        default: return CoefficientMap::inner_product(Nonlinearity::Tanh);
    }
}

/// Explicitly parameterized variants for the simplified form, where the map
/// consumes Z^T X with a fixed knowledge width k.
CoefficientMap explicit_map(int kind, int k, Rng& rng) {
    auto a = [&] { return scale(rng.gaussian_matrix(k, k), 0.5); };
    switch (kind) {
        case 0: return CoefficientMap::softmax_quadratic(a());
        case 1: return CoefficientMap::quadratic(a(), Nonlinearity::Tanh);
        case 2:
            return CoefficientMap::matrix_product(
                {make_term({true, false}, {std::nullopt, a(), std::nullopt}),
                 make_term({true, false, true, false},
                           {std::nullopt, a(), std::nullopt, a(), std::nullopt})},
                Nonlinearity::Tanh);
        case 3: return CoefficientMap::rbf(1.0);
        default: return CoefficientMap::inner_product(Nonlinearity::Tanh);
    }
}

const char* kKindNames[5] = {"softmax_quadratic", "elementwise_quadratic", "matrix_product",
                             "rbf_kernel", "inner_product_kernel"};

// --- CLI plumbing ---------------------------------------------------------------

struct CliResult {
    int exit_code = -1;
    std::string out;
};

std::string cli_binary() {
    const char* bin = std::getenv("EQUISEQ_BIN");
    return bin == nullptr ? std::string() : std::string(bin);
}

CliResult run_cli(const std::string& args) {
    const std::string cmd = cli_binary() + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    CliResult result;
    if (pipe == nullptr) return result;
    char buffer[4096];
    std::size_t got;
    while ((got = fread(buffer, 1, sizeof buffer, pipe)) > 0) result.out.append(buffer, got);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

ModelSpec reverse_task_model() {
    ModelSpec model;
    model.d = 6;
    for (int l = 0; l < 2; ++l) {
        LayerSpec layer;
        layer.kind = LayerKind::MultiHead;
        for (int h = 0; h < 2; ++h) {
            layer.heads.push_back({Matrix(2, 6), Matrix(2, 6), Matrix(6, 6), Matrix(6, 6)});
        }
        layer.residual = (l == 0);
        model.layers.push_back(layer);
    }
    return model;
}

} // namespace

TEST(Acceptance, Criterion01_EquivarianceSuite) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_cell;
    int trials_total = 0;
    std::uint64_t cell_seed = 1000;
    for (int kind = 0; kind < 5; ++kind) {
        for (int form = 0; form < 3; ++form) {
            for (int d : {2, 4, 8, 16}) {
                for (int n : {1, 2, 5, 12}) {
                    for (int k : {2, 4}) {
                        ++cell_seed;
                        AuditConfig cfg;
                        cfg.d_range = {d, d};
                        cfg.n_range = {n, n};
                        cfg.trials = 100;
                        cfg.tol = 1e-9;
                        cfg.seed = cell_seed;
                        AuditReport rep;
                        if (form == 0) {
                            Form1Map m{polymorphic_map(kind)};
                            rep = audit_orthogonal(
                                [&](const Matrix& x) { return apply_form1(m, x); }, cfg);
                        } else if (form == 1) {
                            Rng zrng(cell_seed * 7 + 1);
                            Matrix zdir = zrng.gaussian_matrix(d, k);
                            CoefficientMap g = polymorphic_map(kind);
                            rep = audit_orthogonal_with_knowledge(
                                [&](const Matrix& q) -> SequenceMap {
                                    Form2Map m;
                                    m.z = matmul(q, zdir);
                                    m.g1 = g;
                                    m.g2 = g;
                                    return [m](const Matrix& x) { return apply_form2(m, x); };
                                },
                                cfg);
                        } else {
                            Rng zrng(cell_seed * 7 + 2);
                            Matrix zdir = zrng.gaussian_matrix(d, k);
                            CoefficientMap g = explicit_map(kind, k, zrng);
                            rep = audit_orthogonal_with_knowledge(
                                [&](const Matrix& q) -> SequenceMap {
                                    Form2Map m;
                                    m.z = matmul(q, zdir);
                                    m.g1 = g;
                                    m.simplified = true;
                                    return [m](const Matrix& x) { return apply_form2(m, x); };
                                },
                                cfg);
                        }
                        trials_total += rep.trials_run;
                        if (rep.residual_max > worst) {
                            worst = rep.residual_max;
                            worst_cell = std::string(kKindNames[kind]) + "/form" +
                                         std::to_string(form + 1) + " d=" + std::to_string(d) +
                                         " n=" + std::to_string(n) + " k=" + std::to_string(k);
                        }
                    }
                }
            }
        }
    }
    const double elapsed = seconds_since(t0);
    report(1, worst <= 1e-9 && elapsed < 60.0,
           "form-1/form-2 equivariance: max residual " + fmt(worst) + " over " +
               std::to_string(trials_total) + " trials (worst cell " + worst_cell + "), " +
               fmt(elapsed) + " s (< 60 s)");
}

TEST(Acceptance, Criterion02_AttentionEquivalence) {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = rng.range(1, 8), n = rng.range(1, 8), d1 = rng.range(1, 8);
        Matrix wq = rng.gaussian_matrix(d1, d);
        Matrix wk = rng.gaussian_matrix(d1, d);
        Matrix x = rng.gaussian_matrix(d, n);
        AttentionHead head{wq, wk, Matrix::identity(d), std::nullopt};
        Matrix via_layer = single_head(head, x, false);
        Matrix via_form = apply_form2(attention_as_form2(wq, wk), x);
        worst = std::max(worst, max_abs_diff(via_layer, via_form));
    }
    report(2, worst <= 1e-12,
           "attention_as_form2 == single_head (W_V=I, no residual): max diff " + fmt(worst) +
               " over 100 instances (<= 1e-12)");
}

TEST(Acceptance, Criterion03_BlockQuadraticIdentity) {
    Rng rng(33);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int d = rng.range(1, 8), n = rng.range(1, 8), d1 = rng.range(1, 8);
        Matrix wq = rng.gaussian_matrix(d1, d);
        Matrix wk = rng.gaussian_matrix(d1, d);
        Matrix x = rng.gaussian_matrix(d, n);
        Form2Map m = attention_as_form2(wq, wk);
        Matrix a(2 * d1, 2 * d1);
        for (int i = 0; i < d1; ++i) a(i, d1 + i) = 1.0;
        Matrix lhs = matmul(transpose(x), matmul(matmul(m.z, matmul(a, transpose(m.z))), x));
        Matrix rhs = matmul(transpose(x), matmul(matmul(transpose(wq), wk), x));
        worst = std::max(worst, max_abs_diff(lhs, rhs));
    }
    report(3, worst <= 1e-13,
           "X^T Z A Z^T X == X^T W_Q^T W_K X: max diff " + fmt(worst) +
               " over 100 instances (<= 1e-13)");
}

TEST(Acceptance, Criterion04_RhoPsiDecomposition) {
    double worst = 0.0;
    std::uint64_t seed = 4000;
    int trials_total = 0;
    for (int d : {2, 4, 8}) {
        for (int n : {1, 2, 3, 8}) {
            for (int trial = 0; trial < 50; ++trial) {
                Rng rng(Rng::child_seed(++seed, static_cast<std::uint64_t>(trial)));
                const int d1 = std::max(1, d / 2);
                RhoPsiAttention att{rng.gaussian_matrix(d1, d), rng.gaussian_matrix(d1, d)};
                Matrix x = rng.gaussian_matrix(d, n);
                worst = std::max(worst,
                                 max_abs_diff(rho_psi_matrix(att, x),
                                              direct_attention_coefficients(att.wq, att.wk, x)));
                ++trials_total;
            }
        }
    }
    report(4, worst <= 1e-12,
           "rho/psi assembly == direct softmax coefficients: max diff " + fmt(worst) + " over " +
               std::to_string(trials_total) + " trials (<= 1e-12)");
}

TEST(Acceptance, Criterion05_PermutationSuite) {
    Rng wrng(55);
    const int d = 5, k = 2;
    AttentionHead plain{wrng.gaussian_matrix(2, d), wrng.gaussian_matrix(2, d),
                        wrng.gaussian_matrix(d, d), std::nullopt};
    std::vector<AttentionHead> heads = {
        {wrng.gaussian_matrix(2, d), wrng.gaussian_matrix(2, d), wrng.gaussian_matrix(3, d),
         wrng.gaussian_matrix(d, 3)},
        {wrng.gaussian_matrix(2, d), wrng.gaussian_matrix(2, d), wrng.gaussian_matrix(3, d),
         wrng.gaussian_matrix(d, 3)}};
    std::vector<FormTerm> forms = {
        {wrng.gaussian_matrix(d, d), wrng.gaussian_matrix(d, k),
         CoefficientMap::softmax_quadratic(wrng.gaussian_matrix(k, k))},
        {wrng.gaussian_matrix(d, d), wrng.gaussian_matrix(d, k), CoefficientMap::rbf(0.7)}};

    AuditConfig cfg;
    cfg.d_range = {d, d};
    cfg.n_range = {1, 10};
    cfg.trials = 100;
    cfg.tol = 1e-10;
    cfg.seed = 56;
    AuditReport single = audit_permutation(
        [&](const Matrix& x) { return single_head(plain, x, true); }, cfg);
    cfg.seed = 57;
    AuditReport multi = audit_permutation(
        [&](const Matrix& x) { return multi_head(heads, x, true); }, cfg);
    cfg.seed = 58;
    AuditReport formed = audit_permutation(
        [&](const Matrix& x) { return multihead_form(forms, x); }, cfg);
    const double worst =
        std::max({single.residual_max, multi.residual_max, formed.residual_max});
    report(5, single.pass && multi.pass && formed.pass,
           "f(XP) == f(X)P for single_head/multi_head/multihead_form: max residual " +
               fmt(worst) + " over 3 x 100 permutations (<= 1e-10)");
}

TEST(Acceptance, Criterion06_ArithmeticCounterexample) {
    AuditReport rep = arithmetic_counterexample();
    const bool residual_exact = rep.residual_max == 1.0 && rep.residual_mean == 1.0;
    const bool audit_fails = !rep.pass;
    bool demo_ok = true;
    std::string demo_note = "demo skipped (EQUISEQ_BIN unset)";
    if (!cli_binary().empty()) {
        CliResult demo = run_cli("demo arithmetic");
        demo_ok = demo.exit_code == 0 &&
                  demo.out.find("audit verdict: fail") != std::string::npos;
        demo_note = "demo exit " + std::to_string(demo.exit_code) + ", verdict shown: fail";
    }
    report(6, residual_exact && audit_fails && demo_ok,
           "arithmetic fixture residual exactly " + fmt(rep.residual_max) +
               ", audit verdict fail; " + demo_note);
}

TEST(Acceptance, Criterion07_FiniteInformationShapeRule) {
    const int k = 2;
    Rng rng(77);
    // direct checks: K в {0,1} always rejected, the quadratic term accepted
    bool low_orders_rejected =
        !validate_term_shapes(make_term({}, {std::nullopt}), k).accepted &&
        !validate_term_shapes(make_term({false}, {std::nullopt, std::nullopt}), k).accepted &&
        !validate_term_shapes(make_term({true}, {std::nullopt, std::nullopt}), k).accepted &&
        !validate_term_shapes(
             make_term({false}, {rng.gaussian_matrix(k, k), rng.gaussian_matrix(k, k)}), k)
             .accepted;
    const bool quadratic_accepted =
        validate_term_shapes(
            make_term({true, false}, {std::nullopt, rng.gaussian_matrix(k, k), std::nullopt}), k)
            .accepted;

    // enumeration: every pattern and identity/explicit slot assignment up to
    // K = 3, cross-checked against concrete instantiation at n in {1, 3, 5}
    auto concrete_ok = [&](const TermSpec& term, int n) {
        int rows = -1, cols = -1;
        auto feed = [&](int mr, int mc) {
            if (rows < 0) {
                rows = mr;
                cols = mc;
                return true;
            }
            if (cols != mr) return false;
            cols = mc;
            return true;
        };
        for (int j = 0; j <= term.order(); ++j) {
            if (term.weights[j].has_value()) {
                if (!feed(term.weights[j]->rows(), term.weights[j]->cols())) return false;
            }
            if (j < term.order()) {
                if (!feed(term.transposed[j] ? n : k, term.transposed[j] ? k : n)) return false;
            }
        }
        return rows == n && cols == n;
    };
    int mismatches = 0, accepted = 0, enumerated = 0;
    for (int order = 0; order <= 3; ++order) {
        for (int pattern = 0; pattern < (1 << order); ++pattern) {
            for (int slots = 0; slots < (1 << (order + 1)); ++slots) {
                std::vector<bool> transposed(order);
                for (int j = 0; j < order; ++j) transposed[j] = (pattern >> j) & 1;
                std::vector<std::optional<Matrix>> weights(order + 1);
                for (int j = 0; j <= order; ++j) {
                    if ((slots >> j) & 1) weights[j] = rng.gaussian_matrix(k, k);
                }
                TermSpec term = make_term(transposed, weights);
                const bool symbolic = validate_term_shapes(term, k).accepted;
                bool concrete = order >= 2;
                for (int n : {1, 3, 5}) concrete = concrete && concrete_ok(term, n);
                if (symbolic != concrete) ++mismatches;
                if (symbolic) ++accepted;
                ++enumerated;
            }
        }
    }
    report(7,
           low_orders_rejected && quadratic_accepted && mismatches == 0 && accepted > 0,
           "finite-information rule: K in {0,1} rejected, quadratic accepted; symbolic "
           "inference matches concrete instantiation on all " +
               std::to_string(enumerated) + " enumerated terms (" + std::to_string(accepted) +
               " accepted)");
}

TEST(Acceptance, Criterion08_GradientSuite) {
    // weight scale 0.25 keeps every nonlinearity in its responsive range, so
    // no true gradient entry sits inside the finite-difference noise floor
    const auto t0 = std::chrono::steady_clock::now();
    const double s = 0.25;

    struct Arch {
        std::string name;
        std::uint64_t weight_seed;
        double target_scale;
        ModelSpec model;
    };
    std::vector<Arch> architectures;

    {
        Rng rng(106);
        auto w = [&](int r, int c) { return scale(rng.gaussian_matrix(r, c), s); };
        ModelSpec m;
        m.d = 4;
        LayerSpec layer;
        layer.kind = LayerKind::SingleHead;
        layer.heads = {{w(2, 4), w(2, 4), w(4, 4), std::nullopt}};
        layer.residual = true;
        m.layers.push_back(layer);
        architectures.push_back({"single-head", 106, 0.3, m});
    }
    {
        Rng rng(121);
        auto w = [&](int r, int c) { return scale(rng.gaussian_matrix(r, c), s); };
        ModelSpec m;
        m.d = 4;
        LayerSpec layer;
        layer.kind = LayerKind::MultiHead;
        layer.heads = {{w(2, 4), w(2, 4), w(3, 4), w(4, 3)}, {w(2, 4), w(2, 4), w(3, 4), w(4, 3)}};
        layer.residual = true;
        m.layers.push_back(layer);
        architectures.push_back({"2-head multihead", 121, 0.3, m});
    }
    {
        Rng rng(113);
        auto w = [&](int r, int c) { return scale(rng.gaussian_matrix(r, c), s); };
        ModelSpec m;
        m.d = 4;
        LayerSpec l0;
        l0.kind = LayerKind::SingleHead;
        l0.heads = {{w(2, 4), w(2, 4), w(4, 4), std::nullopt}};
        l0.residual = true;
        m.layers.push_back(l0);
        LayerSpec l1;
        l1.kind = LayerKind::OutputMlp;
        l1.u = w(5, 4);
        l1.v = w(4, 5);
        l1.sigma = Nonlinearity::Tanh;
        l1.z = w(4, 2);
        l1.g = CoefficientMap::softmax_quadratic(w(2, 2));
        m.layers.push_back(l1);
        architectures.push_back({"2-layer stack with OutputMlp", 113, 0.5, m});
    }

    double worst = 0.0;
    std::string worst_arch;
    bool all_pass = true;
    for (const Arch& arch : architectures) {
        Rng trng(arch.weight_seed + 5000);
        Matrix target = scale(trng.gaussian_matrix(arch.model.d, 3), arch.target_scale);
        GradCheckReport rep = grad_check(arch.model, LossKind::HalfSquaredError, target, 10, 1e-5,
                                         1e-6, arch.weight_seed + 9000);
        all_pass = all_pass && rep.pass;
        if (rep.max_rel_error > worst) {
            worst = rep.max_rel_error;
            worst_arch = arch.name + " (" + rep.worst_param + ")";
        }
    }
    const double elapsed = seconds_since(t0);
    report(8, all_pass && elapsed < 120.0,
           "backward vs central differences: max rel error " + fmt(worst) + " at " + worst_arch +
               ", 10 points per architecture (< 1e-6), " + fmt(elapsed) + " s (< 120 s)");
}

TEST(Acceptance, Criterion09_TrainingSmoke) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig cfg;
    cfg.task = TrainTask::Reverse;
    cfg.d = 4;
    cfg.n = 5;
    cfg.steps = 2000;
    cfg.lr = 0.05;
    cfg.seed = 1;
    cfg.model = reverse_task_model();
    RunRecord first = run_train(cfg);
    RunRecord second = run_train(cfg);
    const bool deterministic = first.loss == second.loss && first.final_loss == second.final_loss;
    const double ratio = first.final_loss / first.initial_loss;
    const double elapsed = seconds_since(t0);
    report(9,
           !first.diverged && first.converged && deterministic && elapsed < 300.0,
           "reverse task, 2-layer model, " + std::to_string(first.loss.size()) +
               " steps: final/initial = " + fmt(ratio) +
               " (<= 0.1), deterministic per seed, " + fmt(elapsed) + " s (< 5 min)");
}

TEST(Acceptance, Criterion10_CliDeterminism) {
    if (cli_binary().empty()) {
        report(10, false, "EQUISEQ_BIN unset; cannot exercise the CLI");
        return;
    }
    const fs::path dir =
        fs::temp_directory_path() / ("equiseq_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);

    Rng rng(1010);
    ModelSpec model;
    model.d = 4;
    LayerSpec layer;
    layer.kind = LayerKind::SingleHead;
    layer.heads = {{rng.gaussian_matrix(2, 4), rng.gaussian_matrix(2, 4),
                    rng.gaussian_matrix(4, 4), std::nullopt}};
    layer.residual = true;
    model.layers.push_back(layer);
    write_file(dir / "model.json", model_to_json(model).dump(2) + "\n");

    TrainConfig train;
    train.task = TrainTask::Copy;
    train.d = 4;
    train.n = 3;
    train.steps = 60;
    train.lr = 0.1;
    train.seed = 12;
    train.model = model;
    write_file(dir / "train.json", train_config_to_json(train).dump(2) + "\n");

    bool all_identical = true;
    std::string failing;

    const std::string audit_cmd = "audit " + (dir / "model.json").string() +
                                  " --symmetry permutation --trials 30 --seed 3 --out ";
    run_cli(audit_cmd + (dir / "audit_a.json").string());
    run_cli(audit_cmd + (dir / "audit_b.json").string());
    if (read_file(dir / "audit_a.json").empty() ||
        read_file(dir / "audit_a.json") != read_file(dir / "audit_b.json")) {
        all_identical = false;
        failing += " audit";
    }

    const std::string train_cmd = "train " + (dir / "train.json").string() + " --out ";
    run_cli(train_cmd + (dir / "run_a.json").string());
    run_cli(train_cmd + (dir / "run_b.json").string());
    if (read_file(dir / "run_a.json").empty() ||
        read_file(dir / "run_a.json") != read_file(dir / "run_b.json")) {
        all_identical = false;
        failing += " train";
    }

    CliResult demo_a = run_cli("demo arithmetic");
    CliResult demo_b = run_cli("demo arithmetic");
    if (demo_a.out.empty() || demo_a.out != demo_b.out) {
        all_identical = false;
        failing += " demo";
    }

    CliResult dec_a = run_cli("decompose-check --trials 20 --seed 6");
    CliResult dec_b = run_cli("decompose-check --trials 20 --seed 6");
    if (dec_a.out.empty() || dec_a.out != dec_b.out) {
        all_identical = false;
        failing += " decompose-check";
    }

    report(10, all_identical,
           all_identical
               ? "audit/train output files and demo/decompose-check transcripts are "
                 "byte-identical across re-runs"
               : "non-deterministic command(s):" + failing);
}
