// equiseq command-line front end: audits models for the symmetries they
// claim, demonstrates the arithmetic counterexample, trains the toy tasks,
// and checks the rho/psi decomposition against the direct softmax formula.
//
// Exit codes: 0 success/pass, 1 property failure, 2 usage or parse error.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "equiseq/equiseq.hpp"

namespace {

using namespace equiseq;

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InvalidInputError("cannot open file: " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InvalidInputError("cannot write file: " + path);
    }
    out << content;
}

/// EQUISEQ_SEED overrides --seed for every command when set.
void apply_seed_override(std::uint64_t& seed) {
    const char* env = std::getenv("EQUISEQ_SEED");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    const unsigned long long value = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0') {
        throw InvalidInputError(std::string("EQUISEQ_SEED is not an integer: ") + env);
    }
    seed = static_cast<std::uint64_t>(value);
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidInputError(what + ": " + e.what());
    }
}

// --- audit ------------------------------------------------------------------

struct AuditArgs {
    std::string model_file;
    std::string symmetry;
    std::string out_file;
    std::string dist = "gaussian";
    int dim = 0; // 0 = take the model's dimension
    int seq_len = 4;
    int trials = 100;
    double tol = 1e-9;
    std::uint64_t seed = 0;
};

int run_audit(const AuditArgs& args) {
    ModelSpec model = model_from_json(parse_json(read_text_file(args.model_file), args.model_file),
                                      args.model_file);
    if (args.dim != 0 && args.dim != model.d) {
        throw InvalidInputError("--dim " + std::to_string(args.dim) + " does not match model.d = " +
                                std::to_string(model.d));
    }

    AuditConfig cfg;
    cfg.d_range = {model.d, model.d};
    cfg.n_range = {args.seq_len, args.seq_len};
    cfg.trials = args.trials;
    cfg.tol = args.tol;
    cfg.seed = args.seed;
    if (args.dist == "gaussian") {
        cfg.distribution = InputDistribution::Gaussian;
    } else if (args.dist == "one-hot") {
        cfg.distribution = InputDistribution::OneHot;
    } else if (args.dist == "unit-sphere") {
        cfg.distribution = InputDistribution::UnitSphere;
    } else {
        throw InvalidInputError("unknown --dist: " + args.dist);
    }

    AuditReport report;
    if (args.symmetry == "orthogonal") {
        report = audit_orthogonal(
            [&model](const Matrix& x) { return forward(model, x).output; }, cfg);
    } else if (args.symmetry == "orthogonal-knowledge") {
        report = audit_orthogonal_with_knowledge(
            [&model](const Matrix& q) -> SequenceMap {
                ModelSpec tm = transform_weights(model, q);
                return [tm](const Matrix& x) { return forward(tm, x).output; };
            },
            cfg);
    } else if (args.symmetry == "permutation") {
        report = audit_permutation(
            [&model](const Matrix& x) { return forward(model, x).output; }, cfg);
    } else {
        throw InvalidInputError("unknown --symmetry: " + args.symmetry +
                                " (expected orthogonal, orthogonal-knowledge, or permutation)");
    }

    const json report_json = audit_report_to_json(report);
    if (!args.out_file.empty()) {
        write_text_file(args.out_file, report_json.dump(2) + "\n");
    }
    std::cout << symmetry_name(report.symmetry) << " audit: " << (report.pass ? "pass" : "FAIL")
              << "  residual_max=" << report.residual_max
              << "  residual_mean=" << report.residual_mean << "  trials=" << report.trials_run
              << "  tol=" << report.tolerance << "\n";
    if (!report.pass) {
        std::cout << "worst trial reproducible from child seed " << report.worst_seed << "\n";
    }
    return report.pass ? kExitPass : kExitFail;
}

// --- demo arithmetic ----------------------------------------------------------

int run_demo_arithmetic() {
    std::cout << "Arithmetic counterexample: a rule-table seq2seq function in a fixed\n"
                 "one-hot embedding is not orthogonal equivariant.\n\n";
    std::cout << "Embedding (12 symbols, standard basis of R^12):\n";
    for (int i = 0; i < ArithmeticTask::vocab; ++i) {
        std::cout << "  '" << ArithmeticTask::token_at(i) << "' -> e" << (i + 1) << "\n";
    }

    Matrix x = ArithmeticTask::embed("2+1");
    Matrix fx = ArithmeticTask::apply(x);
    std::cout << "\nf(\"2+1\") = f([e5, e1, e4]) = [e6]   (\"3\"): verified "
              << (fx(5, 0) == 1.0 ? "yes" : "NO") << "\n";

    std::cout << "\nApply Q12, the orthogonal swap of embedding axes 1 and 2\n"
                 "('+' <-> '-'). The transformed input Q12 X reads \"2-1\".\n";
    std::cout << "rule table:    f(Q12 X) = [e4]   (\"1\")\n";
    std::cout << "equivariance:  Q12 f(X) = [e6]   (\"3\")\n";

    AuditReport report = arithmetic_counterexample();
    std::cout << "\nresidual |f(Q12 X) - Q12 f(X)|_max = " << report.residual_max << "\n";
    std::cout << "audit verdict: " << (report.pass ? "pass" : "fail") << " (tolerance "
              << report.tolerance << ")\n";
    std::cout << "\nThe demonstration succeeds by failing the audit: the rule table only\n"
                 "works inside its own embedding, which is why knowledge must transform\n"
                 "along with the input.\n";
    return kExitPass;
}

// --- train --------------------------------------------------------------------

int run_train_command(const std::string& config_path, std::string out_file,
                      std::optional<std::uint64_t> seed_override) {
    const json config_json = parse_json(read_text_file(config_path), config_path);
    TrainConfigFile parsed = train_config_from_json(config_json, config_path);
    if (parsed.model_path.has_value()) {
        std::string model_path = *parsed.model_path;
        // relative model paths resolve against the config file's directory
        const std::size_t slash = config_path.find_last_of('/');
        if (slash != std::string::npos && !model_path.empty() && model_path.front() != '/') {
            model_path = config_path.substr(0, slash + 1) + model_path;
        }
        parsed.cfg.model =
            model_from_json(parse_json(read_text_file(model_path), model_path), model_path);
    }
    if (seed_override.has_value()) parsed.cfg.seed = *seed_override;
    apply_seed_override(parsed.cfg.seed);
    validate_train_config(parsed.cfg);

    RunRecord record = run_train(parsed.cfg);
    if (out_file.empty()) out_file = "run_record.json";
    write_text_file(out_file, run_record_to_json(record).dump(2) + "\n");

    std::cerr << "wall clock: " << record.wall_clock_seconds << " s\n";
    if (record.diverged) {
        std::cout << "training DIVERGED at step " << record.diverged_step << " (loss non-finite)\n";
        return kExitFail;
    }
    std::cout << train_task_name(record.config.task) << " task: initial loss "
              << record.initial_loss << ", final loss " << record.final_loss << " after "
              << record.loss.size() << " steps\n";
    for (const AuditReport& audit : record.audits) {
        std::cout << "  trained-model audit " << symmetry_name(audit.symmetry) << ": "
                  << (audit.pass ? "pass" : "FAIL") << " (residual_max=" << audit.residual_max
                  << ")\n";
    }
    std::cout << "record written to " << out_file << "\n";
    if (!record.converged) {
        std::cout << "final loss above 10% of initial: not converged\n";
        return kExitFail;
    }
    return kExitPass;
}

// --- decompose-check ------------------------------------------------------------

struct DecomposeArgs {
    int dim = 4;
    int d1 = 2;
    int seq_len = 5;
    int trials = 50;
    std::uint64_t seed = 0;
    double perturb_psi2 = 0.0; // fault-injection hook
};

int run_decompose_check(const DecomposeArgs& args) {
    const double bound = 1e-12;
    double worst = 0.0;
    int worst_trial = -1, worst_i = -1, worst_j = -1;
    for (int t = 0; t < args.trials; ++t) {
        Rng rng(Rng::child_seed(args.seed, static_cast<std::uint64_t>(t)));
        RhoPsiAttention att{rng.gaussian_matrix(args.d1, args.dim),
                            rng.gaussian_matrix(args.d1, args.dim)};
        Matrix x = rng.gaussian_matrix(args.dim, args.seq_len);
        Matrix assembled = rho_psi_matrix(att, x, args.perturb_psi2);
        Matrix direct = direct_attention_coefficients(att.wq, att.wk, x);
        for (int i = 0; i < args.seq_len; ++i) {
            for (int j = 0; j < args.seq_len; ++j) {
                const double diff = std::abs(assembled(i, j) - direct(i, j));
                if (diff > worst) {
                    worst = diff;
                    worst_trial = t;
                    worst_i = i;
                    worst_j = j;
                }
            }
        }
    }
    std::cout << "rho/psi vs direct softmax coefficients: max discrepancy " << worst << " over "
              << args.trials << " trials (d=" << args.dim << ", d1=" << args.d1
              << ", n=" << args.seq_len << ")\n";
    if (worst > bound) {
        std::cout << "FAIL: bound " << bound << " exceeded at trial " << worst_trial << ", entry ("
                  << worst_i << "," << worst_j << ")\n";
        return kExitFail;
    }
    std::cout << "pass (bound " << bound << ")\n";
    return kExitPass;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"equiseq: equivariant sequence maps, audits, and toy training"};
    app.require_subcommand(1);

    AuditArgs audit_args;
    CLI::App* audit_cmd = app.add_subcommand("audit", "audit a model file for a symmetry");
    audit_cmd->add_option("model", audit_args.model_file, "model JSON (schema equiseq/1)")
        ->required();
    audit_cmd->add_option("--symmetry", audit_args.symmetry,
                          "orthogonal | orthogonal-knowledge | permutation")
        ->required();
    audit_cmd->add_option("--dim", audit_args.dim, "embedding dimension (must match the model)");
    audit_cmd->add_option("--seq-len", audit_args.seq_len, "sequence length n");
    audit_cmd->add_option("--trials", audit_args.trials, "number of random trials");
    audit_cmd->add_option("--tol", audit_args.tol, "residual tolerance");
    audit_cmd->add_option("--seed", audit_args.seed, "base seed (children drive the trials)");
    audit_cmd->add_option("--dist", audit_args.dist, "gaussian | one-hot | unit-sphere");
    audit_cmd->add_option("--out", audit_args.out_file, "write the audit report JSON here");

    CLI::App* demo_cmd = app.add_subcommand("demo", "worked demonstrations");
    demo_cmd->require_subcommand(1);
    CLI::App* demo_arith =
        demo_cmd->add_subcommand("arithmetic", "the fixed-embedding arithmetic counterexample");

    std::string train_config_path, train_out;
    std::uint64_t train_seed = 0;
    bool train_seed_given = false;
    CLI::App* train_cmd = app.add_subcommand("train", "train a toy copy/reverse task");
    train_cmd->add_option("config", train_config_path, "train config JSON")->required();
    train_cmd->add_option("--out", train_out, "run record path (default run_record.json)");
    train_cmd->add_option("--seed", train_seed, "override the config seed")
        ->each([&train_seed_given](const std::string&) { train_seed_given = true; });

    DecomposeArgs dec_args;
    CLI::App* dec_cmd = app.add_subcommand(
        "decompose-check", "rho/psi assembly vs the direct softmax coefficients");
    dec_cmd->add_option("--dim", dec_args.dim, "embedding dimension d");
    dec_cmd->add_option("--d1", dec_args.d1, "query/key dimension d1");
    dec_cmd->add_option("--seq-len", dec_args.seq_len, "sequence length n");
    dec_cmd->add_option("--trials", dec_args.trials, "number of random trials");
    dec_cmd->add_option("--seed", dec_args.seed, "base seed");
    dec_cmd->add_option("--perturb-psi2", dec_args.perturb_psi2,
                        "fault-injection offset added to every psi_2 summand")
        ->group(""); // test hook, hidden from help

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help and friends
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*audit_cmd) {
            apply_seed_override(audit_args.seed);
            return run_audit(audit_args);
        }
        if (*demo_cmd && *demo_arith) {
            return run_demo_arithmetic();
        }
        if (*train_cmd) {
            std::optional<std::uint64_t> seed_override;
            if (train_seed_given) seed_override = train_seed;
            return run_train_command(train_config_path, train_out, seed_override);
        }
        if (*dec_cmd) {
            apply_seed_override(dec_args.seed);
            return run_decompose_check(dec_args);
        }
    } catch (const InvalidInputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFail;
    }
    return kExitUsage;
}
