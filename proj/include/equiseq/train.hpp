#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "equiseq/attention.hpp"
#include "equiseq/audit.hpp"
#include "equiseq/autodiff.hpp"
#include "equiseq/errors.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/rng.hpp"

namespace equiseq {

// Toy seq2seq trainer: full-batch gradient descent, half-squared-error, a
// fixed generated dataset of 64 sequences. Copy targets the input itself;
// Reverse targets the column-reversed input and receives a fixed sinusoidal
// position encoding (two extra embedding rows) as part of the task fixture,
// so the layers themselves stay position-free.

enum class TrainTask { Copy, Reverse };

inline std::string train_task_name(TrainTask t) {
    return t == TrainTask::Copy ? "copy" : "reverse";
}

enum class InitMode { Gaussian, Keep };

struct TrainConfig {
    TrainTask task = TrainTask::Copy;
    int d = 4;     // data embedding dimension (excluding position rows)
    int n = 4;     // sequence length
    int steps = 100;
    double lr = 0.05;
    std::uint64_t seed = 0;
    InitMode init = InitMode::Gaussian;
    ModelSpec model;
};

struct RunRecord {
    TrainConfig config;            // snapshot with the as-trained initial weights
    std::vector<double> loss;      // pre-update full-batch loss, one per step
    double initial_loss = 0.0;     // equals loss.front() when steps >= 1
    double final_loss = 0.0;       // full-batch loss after the last update
    bool converged = false;        // final <= 0.1 * initial
    bool diverged = false;
    int diverged_step = -1;
    std::vector<AuditReport> audits; // symmetry audits of the trained model
    double wall_clock_seconds = 0.0; // console-only; never serialized
};

/// Number of embedding rows the position fixture appends for a task.
inline int position_rows(TrainTask task) { return task == TrainTask::Reverse ? 2 : 0; }

/// Fixed sinusoidal position encoding: column j carries
/// (sin(w(j+1)), cos(w(j+1))) with w = pi/(n+1). The pair makes "position
/// i+j = n+1" expressible as a bilinear form, which is exactly the coupling
/// column reversal needs.
inline Matrix position_encoding(int n) {
    const double w = 3.14159265358979323846 / (n + 1);
    Matrix p(2, n);
    for (int j = 0; j < n; ++j) {
        p(0, j) = std::sin(w * (j + 1));
        p(1, j) = std::cos(w * (j + 1));
    }
    return p;
}

/// Model input for one data sequence: the raw columns, plus position rows
/// for tasks that need them.
inline Matrix task_input(TrainTask task, const Matrix& data) {
    if (task == TrainTask::Reverse) {
        return vstack(data, position_encoding(data.cols()));
    }
    return data;
}

/// Training target for one model input.
inline Matrix task_target(TrainTask task, const Matrix& input) {
    if (task == TrainTask::Copy) return input;
    Matrix reversed(input.rows(), input.cols());
    for (int i = 0; i < input.rows(); ++i)
        for (int j = 0; j < input.cols(); ++j)
            reversed(i, j) = input(i, input.cols() - 1 - j);
    return reversed;
}

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.steps < 1) throw InvalidInputError("train: steps must be >= 1");
    if (!(cfg.lr > 0.0)) throw InvalidInputError("train: lr must be positive");
    if (cfg.d < 1 || cfg.n < 1) throw InvalidInputError("train: d and n must be >= 1");
    const int expected = cfg.d + position_rows(cfg.task);
    if (cfg.model.d != expected) {
        throw InvalidInputError("train: " + train_task_name(cfg.task) + " task with d=" +
                                std::to_string(cfg.d) + " needs model.d=" +
                                std::to_string(expected) + ", got " +
                                std::to_string(cfg.model.d));
    }
}

namespace detail {

inline constexpr int kTrainBatch = 64;

inline double batch_loss(const ModelSpec& model, const std::vector<Matrix>& inputs,
                         const std::vector<Matrix>& targets) {
    double sum = 0.0;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        sum += half_squared_error(forward(model, inputs[b]).output, targets[b]);
    }
    return sum / static_cast<double>(inputs.size());
}

} // namespace detail

/// Full-batch gradient descent on the configured task. Deterministic per
/// seed: the weight init (when init == Gaussian, entries N(0, 1/d) with
/// d = model.d), the dataset, and the closing audits all derive from child
/// streams of cfg.seed. The returned config snapshot holds the weights the
/// run actually started from.
inline RunRecord run_train(const TrainConfig& cfg) {
    validate_train_config(cfg);

    const auto started = std::chrono::steady_clock::now();
    RunRecord record;
    record.config = cfg;
    struct ClockGuard {
        std::chrono::steady_clock::time_point start;
        RunRecord& rec;
        ~ClockGuard() {
            rec.wall_clock_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
    } clock_guard{started, record};
    ModelSpec& model = record.config.model;

    if (cfg.init == InitMode::Gaussian) {
        Rng init_rng(Rng::child_seed(cfg.seed, 0));
        const double stddev = 1.0 / std::sqrt(static_cast<double>(model.d));
        visit_params(model, [&](const std::string&, Matrix& m) {
            for (int i = 0; i < m.rows(); ++i)
                for (int j = 0; j < m.cols(); ++j) m(i, j) = stddev * init_rng.gaussian();
        });
    }

    Rng data_rng(Rng::child_seed(cfg.seed, 1));
    std::vector<Matrix> inputs, targets;
    inputs.reserve(detail::kTrainBatch);
    targets.reserve(detail::kTrainBatch);
    for (int b = 0; b < detail::kTrainBatch; ++b) {
        const Matrix data = data_rng.gaussian_matrix(cfg.d, cfg.n);
        inputs.push_back(task_input(cfg.task, data));
        targets.push_back(task_target(cfg.task, inputs.back()));
    }

    std::vector<Matrix*> slots;
    visit_params(model, [&](const std::string&, Matrix& m) { slots.push_back(&m); });

    // dry run: genuine configuration problems (shape mismatches, unsupported
    // gradients) surface here instead of being mistaken for divergence
    {
        ForwardResult fr = forward(model, inputs[0]);
        backward(fr, half_squared_error_grad(fr.output, targets[0]));
    }

    record.loss.reserve(static_cast<std::size_t>(cfg.steps));
    const double inv_batch = 1.0 / static_cast<double>(detail::kTrainBatch);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Matrix> grad_sum;
        double loss_sum = 0.0;
        bool exploded = false;
        try {
            for (int b = 0; b < detail::kTrainBatch; ++b) {
                ForwardResult fr = forward(model, inputs[b]);
                loss_sum += half_squared_error(fr.output, targets[b]);
                std::vector<Matrix> grads =
                    backward(fr, half_squared_error_grad(fr.output, targets[b]));
                if (grad_sum.empty()) {
                    grad_sum = std::move(grads);
                } else {
                    for (std::size_t p = 0; p < grads.size(); ++p) {
                        grad_sum[p] = add(grad_sum[p], grads[p]);
                    }
                }
            }
        } catch (const InvalidInputError&) {
            // non-finite values somewhere in the pass: the run has blown up
            // even if the running loss is still representable
            exploded = true;
            loss_sum = std::numeric_limits<double>::quiet_NaN();
        }
        const double step_loss = loss_sum * inv_batch;
        record.loss.push_back(step_loss);
        if (exploded || !std::isfinite(step_loss)) {
            record.initial_loss = record.loss.front();
            record.diverged = true;
            record.diverged_step = step;
            record.final_loss = std::numeric_limits<double>::quiet_NaN();
            return record;
        }
        for (std::size_t p = 0; p < slots.size(); ++p) {
            Matrix& m = *slots[p];
            for (int i = 0; i < m.rows(); ++i)
                for (int j = 0; j < m.cols(); ++j)
                    m(i, j) -= cfg.lr * inv_batch * grad_sum[p](i, j);
        }
    }

    record.initial_loss = record.loss.front();
    record.final_loss = detail::batch_loss(model, inputs, targets);
    if (!std::isfinite(record.final_loss)) {
        record.diverged = true;
        record.diverged_step = cfg.steps;
        return record;
    }
    record.converged = record.final_loss <= 0.1 * record.initial_loss;

    // symmetry audits of the trained model
    AuditConfig audit_cfg;
    audit_cfg.d_range = {model.d, model.d};
    audit_cfg.n_range = {cfg.n, cfg.n};
    audit_cfg.trials = 50;
    audit_cfg.tol = 1e-9;
    audit_cfg.seed = Rng::child_seed(cfg.seed, 2);
    const ModelSpec trained = model;
    record.audits.push_back(audit_permutation(
        [&trained](const Matrix& x) { return forward(trained, x).output; }, audit_cfg));
    audit_cfg.seed = Rng::child_seed(cfg.seed, 3);
    record.audits.push_back(audit_orthogonal_with_knowledge(
        [&trained](const Matrix& q) -> SequenceMap {
            ModelSpec tm = transform_weights(trained, q);
            return [tm](const Matrix& x) { return forward(tm, x).output; };
        },
        audit_cfg));
    return record;
}

} // namespace equiseq
