#pragma once

#include <string>
#include <utility>
#include <vector>

#include "equiseq/errors.hpp"
#include "equiseq/linalg.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/nonlinearity.hpp"

namespace equiseq {

// Reverse-mode differentiation over a fixed, closed operation set: matmul,
// add, transpose, scale, elementwise nonlinearity, and row softmax. One tape
// node per operation; adjoints are derived analytically per node kind. Tapes
// are single-use and must not be shared across threads.

enum class OpKind { Leaf, Constant, Matmul, Add, Transpose, Scale, Elementwise, SoftmaxRows };

class Tape {
public:
    struct Node {
        OpKind op = OpKind::Constant;
        int a = -1;
        int b = -1;
        Matrix value;
        double alpha = 1.0;                       // Scale factor
        Nonlinearity nl = Nonlinearity::Identity; // Elementwise kind
        bool requires_grad = false;
    };

    int leaf(const Matrix& m, bool requires_grad) {
        return push({OpKind::Leaf, -1, -1, m, 1.0, Nonlinearity::Identity, requires_grad});
    }

    int constant(const Matrix& m) {
        return push({OpKind::Constant, -1, -1, m, 1.0, Nonlinearity::Identity, false});
    }

    int matmul(int a, int b) {
        return push({OpKind::Matmul, a, b, equiseq::matmul(val(a), val(b)), 1.0,
                     Nonlinearity::Identity, grad(a) || grad(b)});
    }

    int add(int a, int b) {
        return push({OpKind::Add, a, b, equiseq::add(val(a), val(b)), 1.0,
                     Nonlinearity::Identity, grad(a) || grad(b)});
    }

    int transpose(int a) {
        return push({OpKind::Transpose, a, -1, equiseq::transpose(val(a)), 1.0,
                     Nonlinearity::Identity, grad(a)});
    }

    int scale(int a, double alpha) {
        return push({OpKind::Scale, a, -1, equiseq::scale(val(a), alpha), alpha,
                     Nonlinearity::Identity, grad(a)});
    }

    int elementwise(int a, Nonlinearity nl) {
        return push({OpKind::Elementwise, a, -1, sigma_apply(nl, val(a)), 1.0, nl, grad(a)});
    }

    int softmax_rows(int a) {
        return push({OpKind::SoftmaxRows, a, -1, equiseq::softmax_rows(val(a)), 1.0,
                     Nonlinearity::Identity, grad(a)});
    }

    const Matrix& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    int size() const { return static_cast<int>(nodes_.size()); }
    bool consumed() const { return consumed_; }

    /// Declares the tape non-differentiable (e.g. a coefficient kind outside
    /// the closed op set sits on a parameter path). Forward values stay valid.
    void mark_non_differentiable(std::string reason) { nondiff_reason_ = std::move(reason); }
    const std::string& non_differentiable_reason() const { return nondiff_reason_; }

    /// Reverse pass from root seeded with d(loss)/d(root). Returns one adjoint
    /// per node (empty matrices where no gradient flows). Consumes the tape.
    std::vector<Matrix> backward(int root, const Matrix& seed) {
        if (consumed_) {
            throw TapeError("Tape::backward: tape already consumed; rebuild the forward pass");
        }
        if (!nondiff_reason_.empty()) {
            throw TapeError("Tape::backward: " + nondiff_reason_);
        }
        if (!seed.same_shape(val(root))) {
            throw ShapeError("Tape::backward: seed is " + seed.shape_str() + " but root is " +
                             val(root).shape_str());
        }
        consumed_ = true;
        std::vector<Matrix> adj(nodes_.size());
        adj[static_cast<std::size_t>(root)] = seed;

        auto accumulate = [&](int id, Matrix&& delta) {
            Matrix& slot = adj[static_cast<std::size_t>(id)];
            slot = (slot.size() == 0) ? std::move(delta) : equiseq::add(slot, delta);
        };

        for (int id = root; id >= 0; --id) {
            const Node& node = nodes_[static_cast<std::size_t>(id)];
            const Matrix& out_adj = adj[static_cast<std::size_t>(id)];
            if (!node.requires_grad || out_adj.size() == 0) continue;
            switch (node.op) {
                case OpKind::Leaf:
                case OpKind::Constant:
                    break;
                case OpKind::Matmul:
                    if (grad(node.a)) {
                        accumulate(node.a, equiseq::matmul(out_adj, equiseq::transpose(val(node.b))));
                    }
                    if (grad(node.b)) {
                        accumulate(node.b, equiseq::matmul(equiseq::transpose(val(node.a)), out_adj));
                    }
                    break;
                case OpKind::Add:
                    if (grad(node.a)) accumulate(node.a, Matrix(out_adj));
                    if (grad(node.b)) accumulate(node.b, Matrix(out_adj));
                    break;
                case OpKind::Transpose:
                    accumulate(node.a, equiseq::transpose(out_adj));
                    break;
                case OpKind::Scale:
                    accumulate(node.a, equiseq::scale(out_adj, node.alpha));
                    break;
                case OpKind::Elementwise: {
                    const Matrix& in = val(node.a);
                    Matrix delta = out_adj;
                    for (int i = 0; i < delta.rows(); ++i)
                        for (int j = 0; j < delta.cols(); ++j)
                            delta(i, j) *= sigma_prime(node.nl, in(i, j));
                    accumulate(node.a, std::move(delta));
                    break;
                }
                case OpKind::SoftmaxRows: {
                    const Matrix& s = node.value;
                    Matrix delta(s.rows(), s.cols());
                    for (int i = 0; i < s.rows(); ++i) {
                        double dot = 0.0;
                        for (int j = 0; j < s.cols(); ++j) dot += out_adj(i, j) * s(i, j);
                        for (int j = 0; j < s.cols(); ++j)
                            delta(i, j) = s(i, j) * (out_adj(i, j) - dot);
                    }
                    accumulate(node.a, std::move(delta));
                    break;
                }
            }
        }
        return adj;
    }

private:
    int push(Node&& node) {
        nodes_.push_back(std::move(node));
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
    std::string nondiff_reason_;
};

inline double half_squared_error(const Matrix& out, const Matrix& target) {
    if (!out.same_shape(target)) {
        throw ShapeError("half_squared_error: " + out.shape_str() + " vs " + target.shape_str());
    }
    double s = 0.0;
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) {
            const double diff = out(i, j) - target(i, j);
            s += diff * diff;
        }
    return 0.5 * s;
}

inline Matrix half_squared_error_grad(const Matrix& out, const Matrix& target) {
    return sub(out, target);
}

} // namespace equiseq
