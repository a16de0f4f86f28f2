#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "equiseq/autodiff.hpp"
#include "equiseq/coefficient_map.hpp"
#include "equiseq/errors.hpp"
#include "equiseq/forms.hpp"
#include "equiseq/matrix.hpp"

namespace equiseq {

// Executable layers: single-head and multihead attention, the output
// transforms W X g(Z^T X) and V sigma(U X g(Z^T X)), the multihead form
// sum_i W_i X g_i(Z_i^T X), and ordered stacks of these. Every layer builds
// on the shared tape so immediate evaluation and training use one code path.

struct AttentionHead {
    Matrix wq;                  // d1 x d
    Matrix wk;                  // d1 x d
    Matrix wv;                  // d2 x d
    std::optional<Matrix> wout; // d x d2; required inside multihead attention
};

/// One term of the multihead form: W_i X g_i(Z_i^T X).
struct FormTerm {
    Matrix w; // output transform W_i
    Matrix z; // knowledge Z_i
    CoefficientMap g;
};

enum class LayerKind {
    SingleHead,
    MultiHead,
    OutputLinear,
    OutputMlp,
    MultiheadForm,
    GenericForm,
    FixedBias, // negative-control layer: adds a bias column outside the knowledge
};

inline std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::SingleHead: return "single_head";
        case LayerKind::MultiHead: return "multi_head";
        case LayerKind::OutputLinear: return "output_linear";
        case LayerKind::OutputMlp: return "output_mlp";
        case LayerKind::MultiheadForm: return "multihead_form";
        case LayerKind::GenericForm: return "generic_form";
        case LayerKind::FixedBias: return "fixed_bias";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::GenericForm;
    std::vector<AttentionHead> heads;   // SingleHead (one entry), MultiHead
    std::optional<Matrix> u, v;         // OutputMlp
    std::optional<Matrix> w;            // OutputLinear
    Nonlinearity sigma = Nonlinearity::Identity; // OutputMlp
    std::optional<Matrix> z;            // OutputLinear, OutputMlp, GenericForm
    std::optional<CoefficientMap> g;    // OutputLinear, OutputMlp, GenericForm
    std::vector<FormTerm> forms;        // MultiheadForm
    std::optional<Matrix> bias;         // FixedBias, d x 1
    bool residual = false;
    std::optional<double> scale;        // attention logit scale; default 1/sqrt(d1)
};

struct ModelSpec {
    int d = 0; // embedding dimension of the input sequence
    std::vector<LayerSpec> layers;
};

/// Handle to one trainable weight matrix inside a forward tape.
struct ParamRef {
    std::string name;
    int node = -1;
};

struct ForwardResult {
    Matrix output;
    Tape tape;
    int output_id = -1;
    std::vector<ParamRef> params;
};

namespace detail {

/// Visits every trainable weight matrix of a layer in a fixed order; the
/// same order is used for tape registration, gradient extraction, and
/// parameter updates. The fixed-bias matrix is deliberately not visited:
/// that layer models knowledge withheld from training and transforms.
template <typename Layer, typename F>
void visit_layer_params(Layer& layer, const std::string& prefix, F&& f) {
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
        const std::string hp = prefix + ".heads" + std::to_string(h);
        f(hp + ".wq", layer.heads[h].wq);
        f(hp + ".wk", layer.heads[h].wk);
        f(hp + ".wv", layer.heads[h].wv);
        if (layer.heads[h].wout.has_value()) f(hp + ".wout", *layer.heads[h].wout);
    }
    if (layer.u.has_value()) f(prefix + ".u", *layer.u);
    if (layer.v.has_value()) f(prefix + ".v", *layer.v);
    if (layer.w.has_value()) f(prefix + ".w", *layer.w);
    if (layer.z.has_value()) f(prefix + ".z", *layer.z);
    if (layer.g.has_value() && layer.g->a().has_value()) f(prefix + ".g.a", *layer.g->a());
    for (std::size_t i = 0; i < layer.forms.size(); ++i) {
        const std::string fp = prefix + ".forms" + std::to_string(i);
        f(fp + ".w", layer.forms[i].w);
        f(fp + ".z", layer.forms[i].z);
        if (layer.forms[i].g.a().has_value()) f(fp + ".g.a", *layer.forms[i].g.a());
    }
}

} // namespace detail

/// Visits every trainable weight matrix of the model in registration order.
template <typename Model, typename F>
void visit_params(Model& model, F&& f) {
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        detail::visit_layer_params(model.layers[l], "layer" + std::to_string(l), f);
    }
}

namespace detail {

/// Pre-registered tape ids for a layer's weights, keyed by visit order.
struct LayerNodes {
    std::vector<int> ids;
    std::size_t cursor = 0;
    int next() { return ids[cursor++]; }
};

/// W_V X softmax_rows(scale X^T W_Q^T W_K X)^T for one head, without W_out.
inline int build_head(Tape& t, int x_id, int wq_id, int wk_id, int wv_id, double scale_value) {
    const int q = t.matmul(wq_id, x_id);
    const int k = t.matmul(wk_id, x_id);
    int logits = t.matmul(t.transpose(q), k);
    if (scale_value != 1.0) logits = t.scale(logits, scale_value);
    const int weights = t.softmax_rows(logits);
    return t.matmul(t.matmul(wv_id, x_id), t.transpose(weights));
}

/// Coefficient map applied to y on the tape. a_id is the tape id of an
/// explicit A parameter, or -1 for the adaptive identity. Kinds outside the
/// closed op set (the RBF kernel) are inserted as constants; if parameters
/// sit upstream of y the tape is marked non-differentiable.
inline int build_coefficient(Tape& t, const CoefficientMap& map, int y_id, int a_id = -1) {
    const int k = t.val(y_id).rows();
    if (a_id < 0 && (map.kind() == MapKind::SoftmaxQuadratic ||
                     map.kind() == MapKind::ElementwiseQuadratic)) {
        a_id = t.constant(Matrix::identity(k));
    }
    switch (map.kind()) {
        case MapKind::SoftmaxQuadratic: {
            int inner = t.matmul(t.transpose(y_id), t.matmul(a_id, y_id));
            const double s = map.resolve_scale(k);
            if (s != 1.0) inner = t.scale(inner, s);
            return t.transpose(t.softmax_rows(inner));
        }
        case MapKind::ElementwiseQuadratic: {
            int inner = t.matmul(t.transpose(y_id), t.matmul(a_id, y_id));
            const double s = map.resolve_scale(k);
            if (s != 1.0) inner = t.scale(inner, s);
            return t.elementwise(inner, map.nonlinearity());
        }
        case MapKind::InnerProductKernel:
            return t.elementwise(t.matmul(t.transpose(y_id), y_id), map.nonlinearity());
        case MapKind::MatrixProduct: {
            const int yt = t.transpose(y_id);
            int sum = -1;
            for (const TermSpec& term : map.terms()) {
                const ShapeReport report = validate_term_shapes(term, k);
                if (!report.accepted) {
                    throw FiniteInformationError("matrix-product term rejected: " + report.reason);
                }
                int acc = -1;
                auto feed = [&](int id) { acc = (acc < 0) ? id : t.matmul(acc, id); };
                for (int j = 0; j <= term.order(); ++j) {
                    if (term.weights[j].has_value()) feed(t.constant(*term.weights[j]));
                    if (j < term.order()) feed(term.transposed[j] ? yt : y_id);
                }
                sum = (sum < 0) ? acc : t.add(sum, acc);
            }
            if (sum < 0) {
                const int n = t.val(y_id).cols();
                sum = t.constant(Matrix(n, n));
            }
            return t.elementwise(sum, map.nonlinearity());
        }
        case MapKind::RbfKernel: {
            if (t.grad(y_id)) {
                t.mark_non_differentiable(
                    "rbf_kernel coefficients are outside the differentiable op set");
            }
            return t.constant(eval_rbf(t.val(y_id), map.gamma()));
        }
    }
    throw InvalidInputError("build_coefficient: unknown map kind");
}

inline int build_layer(Tape& t, const LayerSpec& layer, int x_id, LayerNodes& nodes) {
    const int n = t.val(x_id).cols();
    switch (layer.kind) {
        case LayerKind::SingleHead: {
            if (layer.heads.size() != 1) {
                throw ShapeError("single_head layer needs exactly one head, got " +
                                 std::to_string(layer.heads.size()));
            }
            const AttentionHead& head = layer.heads[0];
            const int wq = nodes.next(), wk = nodes.next(), wv = nodes.next();
            const double s = layer.scale.value_or(1.0 / std::sqrt(double(head.wq.rows())));
            const int out = build_head(t, x_id, wq, wk, wv, s);
            return layer.residual ? t.add(x_id, out) : out;
        }
        case LayerKind::MultiHead: {
            if (layer.heads.empty()) {
                throw ShapeError("multi_head layer needs at least one head");
            }
            int sum = -1;
            for (const AttentionHead& head : layer.heads) {
                if (!head.wout.has_value()) {
                    throw ShapeError("multi_head layer: every head needs wout");
                }
                const int wq = nodes.next(), wk = nodes.next(), wv = nodes.next();
                const int wout = nodes.next();
                const double s = layer.scale.value_or(1.0 / std::sqrt(double(head.wq.rows())));
                const int h = t.matmul(wout, build_head(t, x_id, wq, wk, wv, s));
                sum = (sum < 0) ? h : t.add(sum, h);
            }
            return layer.residual ? t.add(x_id, sum) : sum;
        }
        case LayerKind::OutputLinear: {
            if (!layer.w.has_value() || !layer.z.has_value() || !layer.g.has_value()) {
                throw ShapeError("output_linear layer needs w, z and g");
            }
            const int w = nodes.next(), z = nodes.next();
            const int a = layer.g->a().has_value() ? nodes.next() : -1;
            const int y = t.matmul(t.transpose(z), x_id);
            const int coeff = build_coefficient(t, *layer.g, y, a);
            const int out = t.matmul(w, t.matmul(x_id, coeff));
            return layer.residual ? t.add(x_id, out) : out;
        }
        case LayerKind::OutputMlp: {
            if (!layer.u.has_value() || !layer.v.has_value() || !layer.z.has_value() ||
                !layer.g.has_value()) {
                throw ShapeError("output_mlp layer needs u, v, z and g");
            }
            const int u = nodes.next(), v = nodes.next(), z = nodes.next();
            const int a = layer.g->a().has_value() ? nodes.next() : -1;
            const int y = t.matmul(t.transpose(z), x_id);
            const int coeff = build_coefficient(t, *layer.g, y, a);
            const int out = t.matmul(v, t.elementwise(t.matmul(u, t.matmul(x_id, coeff)),
                                                      layer.sigma));
            return layer.residual ? t.add(x_id, out) : out;
        }
        case LayerKind::MultiheadForm: {
            if (layer.forms.empty()) {
                throw ShapeError("multihead_form layer needs at least one form term");
            }
            int sum = -1;
            for (const FormTerm& term : layer.forms) {
                const int w = nodes.next(), z = nodes.next();
                const int a = term.g.a().has_value() ? nodes.next() : -1;
                const int y = t.matmul(t.transpose(z), x_id);
                const int coeff = build_coefficient(t, term.g, y, a);
                const int h = t.matmul(w, t.matmul(x_id, coeff));
                sum = (sum < 0) ? h : t.add(sum, h);
            }
            return layer.residual ? t.add(x_id, sum) : sum;
        }
        case LayerKind::GenericForm: {
            if (!layer.z.has_value() || !layer.g.has_value()) {
                throw ShapeError("generic_form layer needs z and g");
            }
            const int z = nodes.next();
            const int a = layer.g->a().has_value() ? nodes.next() : -1;
            const int y = t.matmul(t.transpose(z), x_id);
            const int coeff = build_coefficient(t, *layer.g, y, a);
            const int out = t.matmul(x_id, coeff);
            return layer.residual ? t.add(x_id, out) : out;
        }
        case LayerKind::FixedBias: {
            if (!layer.bias.has_value() || layer.bias->cols() != 1) {
                throw ShapeError("fixed_bias layer needs a d x 1 bias column");
            }
            Matrix broadcast(layer.bias->rows(), n);
            for (int i = 0; i < broadcast.rows(); ++i)
                for (int j = 0; j < n; ++j) broadcast(i, j) = (*layer.bias)(i, 0);
            return t.add(x_id, t.constant(broadcast));
        }
    }
    throw InvalidInputError("build_layer: unknown layer kind");
}

} // namespace detail

/// Sequential application h^(0) = X, h^(l) = layer_l(h^(l-1)); the returned
/// tape supports one reverse pass over every registered weight matrix.
inline ForwardResult forward(const ModelSpec& model, const Matrix& x) {
    if (x.rows() != model.d) {
        throw ShapeError("forward: input is " + x.shape_str() + " but model.d = " +
                         std::to_string(model.d));
    }
    ForwardResult fr;
    const int x0 = fr.tape.leaf(x, false);
    int cur = x0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        detail::LayerNodes nodes;
        detail::visit_layer_params(model.layers[l], "layer" + std::to_string(l),
                                   [&](const std::string& name, const Matrix& m) {
                                       nodes.ids.push_back(fr.tape.leaf(m, true));
                                       fr.params.push_back({name, nodes.ids.back()});
                                   });
        try {
            cur = detail::build_layer(fr.tape, model.layers[l], cur, nodes);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(l) + " (" +
                             layer_kind_name(model.layers[l].kind) + "): " + e.what());
        }
    }
    fr.output_id = cur;
    fr.output = fr.tape.val(cur);
    return fr;
}

/// Gradients of a scalar loss with respect to every weight matrix, aligned
/// with fr.params. Parameters the loss never touches get zero gradients.
inline std::vector<Matrix> backward(ForwardResult& fr, const Matrix& loss_grad) {
    std::vector<Matrix> adj = fr.tape.backward(fr.output_id, loss_grad);
    std::vector<Matrix> grads;
    grads.reserve(fr.params.size());
    for (const ParamRef& p : fr.params) {
        Matrix& g = adj[static_cast<std::size_t>(p.node)];
        if (g.size() == 0) {
            const Matrix& v = fr.tape.val(p.node);
            g = Matrix(v.rows(), v.cols());
        }
        if (!g.all_finite()) {
            throw InvalidInputError("backward: non-finite gradient for " + p.name);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

/// Single-head attention X + W_V X softmax_rows(scale X^T W_Q^T W_K X)^T, with the
/// residual term optional and scale defaulting to 1/sqrt(d1).
inline Matrix single_head(const AttentionHead& head, const Matrix& x, bool residual = true,
                          std::optional<double> scale = std::nullopt) {
    ModelSpec model;
    model.d = x.rows();
    LayerSpec layer;
    layer.kind = LayerKind::SingleHead;
    layer.heads = {AttentionHead{head.wq, head.wk, head.wv, std::nullopt}};
    layer.residual = residual;
    layer.scale = scale;
    model.layers.push_back(std::move(layer));
    return forward(model, x).output;
}

/// Multihead attention: X + sum_i W_out^(i) head_i(X) (residual optional).
inline Matrix multi_head(const std::vector<AttentionHead>& heads, const Matrix& x,
                         bool residual = true) {
    ModelSpec model;
    model.d = x.rows();
    LayerSpec layer;
    layer.kind = LayerKind::MultiHead;
    layer.heads = heads;
    layer.residual = residual;
    model.layers.push_back(std::move(layer));
    return forward(model, x).output;
}

/// W X g(Z^T X): elementwise linear change of the output embedding.
inline Matrix output_linear(const Matrix& w, const Matrix& x, const Matrix& z,
                            const CoefficientMap& g) {
    ModelSpec model;
    model.d = x.rows();
    LayerSpec layer;
    layer.kind = LayerKind::OutputLinear;
    layer.w = w;
    layer.z = z;
    layer.g = g;
    model.layers.push_back(std::move(layer));
    return forward(model, x).output;
}

/// V sigma(U X g(Z^T X)): two-layer elementwise transform of the output.
inline Matrix output_mlp(const Matrix& u, const Matrix& v, Nonlinearity sigma, const Matrix& x,
                         const Matrix& z, const CoefficientMap& g) {
    ModelSpec model;
    model.d = x.rows();
    LayerSpec layer;
    layer.kind = LayerKind::OutputMlp;
    layer.u = u;
    layer.v = v;
    layer.sigma = sigma;
    layer.z = z;
    layer.g = g;
    model.layers.push_back(std::move(layer));
    return forward(model, x).output;
}

/// sum_i W_i X g_i(Z_i^T X): the multihead form.
inline Matrix multihead_form(const std::vector<FormTerm>& forms, const Matrix& x) {
    ModelSpec model;
    model.d = x.rows();
    LayerSpec layer;
    layer.kind = LayerKind::MultiheadForm;
    layer.forms = forms;
    model.layers.push_back(std::move(layer));
    return forward(model, x).output;
}

/// Conjugates every weight matrix of the model by the orthogonal Q, the
/// layer-level joint transform under which equivariant layers commute with
/// Q: input-side maps (wq, wk, wv, u) become W Q^T, output-side maps (wout,
/// v) become Q W, square embedding maps (w of output_linear, form W_i)
/// become Q W Q^T, and knowledge columns (z) become Q z. Fixed-bias columns
/// are left untouched, which is what makes that layer a negative control.
inline ModelSpec transform_weights(const ModelSpec& model, const Matrix& q) {
    ModelSpec out = model;
    const Matrix qt = transpose(q);
    for (LayerSpec& layer : out.layers) {
        for (AttentionHead& head : layer.heads) {
            head.wq = matmul(head.wq, qt);
            head.wk = matmul(head.wk, qt);
            if (layer.kind == LayerKind::SingleHead) {
                // d2 = d: the value map acts on the embedding and conjugates
                head.wv = matmul(q, matmul(head.wv, qt));
            } else {
                head.wv = matmul(head.wv, qt);
            }
            if (head.wout.has_value()) head.wout = matmul(q, *head.wout);
        }
        if (layer.u.has_value()) layer.u = matmul(*layer.u, qt);
        if (layer.v.has_value()) layer.v = matmul(q, *layer.v);
        if (layer.w.has_value()) layer.w = matmul(q, matmul(*layer.w, qt));
        if (layer.z.has_value()) layer.z = matmul(q, *layer.z);
        for (FormTerm& term : layer.forms) {
            term.w = matmul(q, matmul(term.w, qt));
            term.z = matmul(q, term.z);
        }
    }
    return out;
}

} // namespace equiseq
