#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "equiseq/attention.hpp"
#include "equiseq/audit.hpp"
#include "equiseq/coefficient_map.hpp"
#include "equiseq/errors.hpp"
#include "equiseq/forms.hpp"
#include "equiseq/matrix.hpp"
#include "equiseq/nonlinearity.hpp"
#include "equiseq/train.hpp"

namespace equiseq {

// JSON encodings for every file format the tools read or write. All files
// carry "schema": "equiseq/1". Parsing is strict: unknown kinds, missing
// fields, and invariant violations raise InvalidInputError with the offending
// field named so the CLI can exit 2 with a usable diagnostic.

using json = nlohmann::json;

inline constexpr const char* kSchemaTag = "equiseq/1";

namespace detail {

inline const json& require_field(const json& j, const char* key, const std::string& context) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw InvalidInputError(context + ": missing field \"" + key + "\"");
    }
    return *it;
}

inline void require_schema(const json& j, const std::string& context) {
    const json& tag = require_field(j, "schema", context);
    if (!tag.is_string() || tag.get<std::string>() != kSchemaTag) {
        throw InvalidInputError(context + ": schema must be \"" + kSchemaTag + "\"");
    }
}

} // namespace detail

// --- Matrix ---------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

inline Matrix matrix_from_json(const json& j, const std::string& context) {
    if (!j.is_object()) {
        throw InvalidInputError(context + ": expected a matrix object");
    }
    const int rows = detail::require_field(j, "rows", context).get<int>();
    const int cols = detail::require_field(j, "cols", context).get<int>();
    std::vector<double> data =
        detail::require_field(j, "data", context).get<std::vector<double>>();
    if (rows < 0 || cols < 0 ||
        data.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        throw InvalidInputError(context + ": data length " + std::to_string(data.size()) +
                                " does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
    }
    return Matrix(rows, cols, std::move(data));
}

// --- CoefficientMap ---------------------------------------------------------

inline json coefficient_map_to_json(const CoefficientMap& map) {
    json j;
    j["kind"] = map_kind_name(map.kind());
    j["nonlinearity"] = nonlinearity_name(map.nonlinearity());
    if (map.scale().has_value()) {
        j["scale"] = *map.scale();
    } else {
        j["scale"] = "inv_sqrt_k";
    }
    json params = json::object();
    switch (map.kind()) {
        case MapKind::SoftmaxQuadratic:
        case MapKind::ElementwiseQuadratic:
            params["a"] = map.a().has_value() ? matrix_to_json(*map.a()) : json("identity");
            break;
        case MapKind::MatrixProduct: {
            json terms = json::array();
            for (const TermSpec& term : map.terms()) {
                json pattern = json::array();
                for (bool t : term.transposed) pattern.push_back(t ? "transposed" : "as_is");
                json weights = json::array();
                for (const auto& w : term.weights) {
                    weights.push_back(w.has_value() ? matrix_to_json(*w) : json("identity"));
                }
                terms.push_back(json{{"pattern", pattern}, {"weights", weights}});
            }
            params["terms"] = terms;
            break;
        }
        case MapKind::RbfKernel:
            params["gamma"] = map.gamma();
            break;
        case MapKind::InnerProductKernel:
            break;
    }
    j["params"] = params;
    return j;
}

inline CoefficientMap coefficient_map_from_json(const json& j, const std::string& context) {
    const std::string kind = detail::require_field(j, "kind", context).get<std::string>();
    Nonlinearity nl = Nonlinearity::Identity;
    if (j.contains("nonlinearity")) {
        nl = nonlinearity_from_name(j.at("nonlinearity").get<std::string>());
    }
    std::optional<double> scale;
    if (j.contains("scale") && !j.at("scale").is_null()) {
        const json& s = j.at("scale");
        if (s.is_string()) {
            if (s.get<std::string>() != "inv_sqrt_k") {
                throw InvalidInputError(context + ": scale must be a number or \"inv_sqrt_k\"");
            }
        } else {
            scale = s.get<double>();
        }
    }
    const json params = j.value("params", json::object());

    auto read_a = [&]() -> std::optional<Matrix> {
        if (!params.contains("a") || params.at("a") == json("identity")) return std::nullopt;
        return matrix_from_json(params.at("a"), context + ".params.a");
    };

    if (kind == "softmax_quadratic") {
        return CoefficientMap::softmax_quadratic(read_a(), scale);
    }
    if (kind == "elementwise_quadratic") {
        return CoefficientMap::quadratic(read_a(), nl, scale.value_or(1.0));
    }
    if (kind == "matrix_product") {
        const json& terms_json = detail::require_field(params, "terms", context + ".params");
        if (!terms_json.is_array()) {
            throw InvalidInputError(context + ".params.terms: expected an array");
        }
        if (terms_json.size() > 16) {
            throw InvalidInputError(context + ".params.terms: " +
                                    std::to_string(terms_json.size()) +
                                    " terms exceed the cap of 16");
        }
        std::vector<TermSpec> terms;
        for (std::size_t i = 0; i < terms_json.size(); ++i) {
            const std::string tctx = context + ".params.terms[" + std::to_string(i) + "]";
            const json& tj = terms_json[i];
            std::vector<bool> transposed;
            for (const json& p : detail::require_field(tj, "pattern", tctx)) {
                const std::string name = p.get<std::string>();
                if (name == "transposed") {
                    transposed.push_back(true);
                } else if (name == "as_is") {
                    transposed.push_back(false);
                } else {
                    throw InvalidInputError(tctx + ": pattern entries are \"as_is\" or "
                                                   "\"transposed\", got \"" + name + "\"");
                }
            }
            if (transposed.size() < 2) {
                throw InvalidInputError(tctx + ": terms need K >= 2 factors, got " +
                                        std::to_string(transposed.size()));
            }
            std::vector<std::optional<Matrix>> weights;
            for (const json& w : detail::require_field(tj, "weights", tctx)) {
                if (w == json("identity")) {
                    weights.emplace_back(std::nullopt);
                } else {
                    weights.emplace_back(matrix_from_json(w, tctx + ".weights"));
                }
            }
            terms.push_back(make_term(std::move(transposed), std::move(weights)));
        }
        return CoefficientMap::matrix_product(std::move(terms), nl);
    }
    if (kind == "rbf_kernel") {
        const double gamma = detail::require_field(params, "gamma", context + ".params").get<double>();
        if (!(gamma > 0.0)) {
            throw InvalidInputError(context + ".params.gamma: must be positive");
        }
        return CoefficientMap::rbf(gamma);
    }
    if (kind == "inner_product_kernel") {
        return CoefficientMap::inner_product(nl);
    }
    throw InvalidInputError(context + ": unknown coefficient map kind \"" + kind + "\"");
}

// --- Forms ------------------------------------------------------------------

inline json form1_to_json(const Form1Map& m) {
    return json{{"form", "form1"}, {"g1", coefficient_map_to_json(m.g)}};
}

inline json form2_to_json(const Form2Map& m) {
    json j{{"form", "form2"},
           {"simplified", m.simplified},
           {"z", matrix_to_json(m.z)},
           {"g1", coefficient_map_to_json(m.g1)}};
    if (m.g2.has_value()) j["g2"] = coefficient_map_to_json(*m.g2);
    return j;
}

inline Form1Map form1_from_json(const json& j, const std::string& context = "form") {
    if (detail::require_field(j, "form", context).get<std::string>() != "form1") {
        throw InvalidInputError(context + ": expected form1");
    }
    return Form1Map{coefficient_map_from_json(detail::require_field(j, "g1", context),
                                              context + ".g1")};
}

inline Form2Map form2_from_json(const json& j, const std::string& context = "form") {
    if (detail::require_field(j, "form", context).get<std::string>() != "form2") {
        throw InvalidInputError(context + ": expected form2");
    }
    Form2Map m;
    m.z = matrix_from_json(detail::require_field(j, "z", context), context + ".z");
    m.g1 = coefficient_map_from_json(detail::require_field(j, "g1", context), context + ".g1");
    m.simplified = j.value("simplified", false);
    if (j.contains("g2")) {
        if (m.simplified) {
            throw InvalidInputError(context + ": simplified form takes no g2");
        }
        m.g2 = coefficient_map_from_json(j.at("g2"), context + ".g2");
    }
    return m;
}

// --- Layers and models --------------------------------------------------------

inline json attention_head_to_json(const AttentionHead& h) {
    json j{{"wq", matrix_to_json(h.wq)}, {"wk", matrix_to_json(h.wk)},
           {"wv", matrix_to_json(h.wv)}};
    if (h.wout.has_value()) j["wout"] = matrix_to_json(*h.wout);
    return j;
}

inline AttentionHead attention_head_from_json(const json& j, const std::string& context,
                                              bool need_wout) {
    AttentionHead h;
    h.wq = matrix_from_json(detail::require_field(j, "wq", context), context + ".wq");
    h.wk = matrix_from_json(detail::require_field(j, "wk", context), context + ".wk");
    h.wv = matrix_from_json(detail::require_field(j, "wv", context), context + ".wv");
    if (j.contains("wout")) {
        h.wout = matrix_from_json(j.at("wout"), context + ".wout");
    } else if (need_wout) {
        throw InvalidInputError(context + ": missing field \"wout\"");
    }
    return h;
}

inline json layer_to_json(const LayerSpec& layer) {
    json j;
    j["kind"] = layer_kind_name(layer.kind);
    switch (layer.kind) {
        case LayerKind::SingleHead:
            j["head"] = attention_head_to_json(layer.heads.at(0));
            break;
        case LayerKind::MultiHead: {
            json heads = json::array();
            for (const AttentionHead& h : layer.heads) heads.push_back(attention_head_to_json(h));
            j["heads"] = heads;
            break;
        }
        case LayerKind::OutputLinear:
            j["w"] = matrix_to_json(*layer.w);
            j["z"] = matrix_to_json(*layer.z);
            j["g"] = coefficient_map_to_json(*layer.g);
            break;
        case LayerKind::OutputMlp:
            j["u"] = matrix_to_json(*layer.u);
            j["v"] = matrix_to_json(*layer.v);
            j["nonlinearity"] = nonlinearity_name(layer.sigma);
            j["z"] = matrix_to_json(*layer.z);
            j["g"] = coefficient_map_to_json(*layer.g);
            break;
        case LayerKind::MultiheadForm: {
            json forms = json::array();
            for (const FormTerm& term : layer.forms) {
                forms.push_back(json{{"w", matrix_to_json(term.w)},
                                     {"z", matrix_to_json(term.z)},
                                     {"g", coefficient_map_to_json(term.g)}});
            }
            j["forms"] = forms;
            break;
        }
        case LayerKind::GenericForm:
            j["z"] = matrix_to_json(*layer.z);
            j["g"] = coefficient_map_to_json(*layer.g);
            break;
        case LayerKind::FixedBias:
            j["bias"] = matrix_to_json(*layer.bias);
            break;
    }
    if (layer.residual) j["residual"] = true;
    if (layer.scale.has_value()) j["scale"] = *layer.scale;
    return j;
}

inline LayerSpec layer_from_json(const json& j, const std::string& context) {
    LayerSpec layer;
    const std::string kind = detail::require_field(j, "kind", context).get<std::string>();
    layer.residual = j.value("residual", false);
    if (j.contains("scale")) layer.scale = j.at("scale").get<double>();

    if (kind == "single_head") {
        layer.kind = LayerKind::SingleHead;
        layer.heads = {attention_head_from_json(detail::require_field(j, "head", context),
                                                context + ".head", false)};
        if (j.at("head").contains("wout")) {
            throw InvalidInputError(context + ".head: single_head takes no wout");
        }
    } else if (kind == "multi_head") {
        layer.kind = LayerKind::MultiHead;
        const json& heads = detail::require_field(j, "heads", context);
        if (!heads.is_array() || heads.empty()) {
            throw InvalidInputError(context + ".heads: expected a nonempty array");
        }
        for (std::size_t i = 0; i < heads.size(); ++i) {
            layer.heads.push_back(attention_head_from_json(
                heads[i], context + ".heads[" + std::to_string(i) + "]", true));
        }
    } else if (kind == "output_linear") {
        layer.kind = LayerKind::OutputLinear;
        layer.w = matrix_from_json(detail::require_field(j, "w", context), context + ".w");
        layer.z = matrix_from_json(detail::require_field(j, "z", context), context + ".z");
        layer.g = coefficient_map_from_json(detail::require_field(j, "g", context),
                                            context + ".g");
    } else if (kind == "output_mlp") {
        layer.kind = LayerKind::OutputMlp;
        layer.u = matrix_from_json(detail::require_field(j, "u", context), context + ".u");
        layer.v = matrix_from_json(detail::require_field(j, "v", context), context + ".v");
        if (j.contains("nonlinearity")) {
            layer.sigma = nonlinearity_from_name(j.at("nonlinearity").get<std::string>());
        }
        layer.z = matrix_from_json(detail::require_field(j, "z", context), context + ".z");
        layer.g = coefficient_map_from_json(detail::require_field(j, "g", context),
                                            context + ".g");
    } else if (kind == "multihead_form") {
        layer.kind = LayerKind::MultiheadForm;
        const json& forms = detail::require_field(j, "forms", context);
        if (!forms.is_array() || forms.empty()) {
            throw InvalidInputError(context + ".forms: expected a nonempty array");
        }
        for (std::size_t i = 0; i < forms.size(); ++i) {
            const std::string fctx = context + ".forms[" + std::to_string(i) + "]";
            const json& fj = forms[i];
            layer.forms.push_back(
                {matrix_from_json(detail::require_field(fj, "w", fctx), fctx + ".w"),
                 matrix_from_json(detail::require_field(fj, "z", fctx), fctx + ".z"),
                 coefficient_map_from_json(detail::require_field(fj, "g", fctx), fctx + ".g")});
        }
    } else if (kind == "generic_form") {
        layer.kind = LayerKind::GenericForm;
        layer.z = matrix_from_json(detail::require_field(j, "z", context), context + ".z");
        layer.g = coefficient_map_from_json(detail::require_field(j, "g", context),
                                            context + ".g");
    } else if (kind == "fixed_bias") {
        layer.kind = LayerKind::FixedBias;
        layer.bias = matrix_from_json(detail::require_field(j, "bias", context),
                                      context + ".bias");
        if (layer.bias->cols() != 1) {
            throw InvalidInputError(context + ".bias: expected a single column");
        }
    } else {
        throw InvalidInputError(context + ": unknown layer kind \"" + kind + "\"");
    }
    return layer;
}

inline json model_to_json(const ModelSpec& model) {
    json layers = json::array();
    for (const LayerSpec& layer : model.layers) layers.push_back(layer_to_json(layer));
    return json{{"schema", kSchemaTag}, {"d", model.d}, {"layers", layers}};
}

inline ModelSpec model_from_json(const json& j, const std::string& context = "model") {
    detail::require_schema(j, context);
    ModelSpec model;
    model.d = detail::require_field(j, "d", context).get<int>();
    if (model.d < 1) {
        throw InvalidInputError(context + ".d: must be >= 1");
    }
    const json& layers = detail::require_field(j, "layers", context);
    if (!layers.is_array()) {
        throw InvalidInputError(context + ".layers: expected an array");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        model.layers.push_back(
            layer_from_json(layers[i], context + ".layers[" + std::to_string(i) + "]"));
    }
    return model;
}

// --- Audit reports -----------------------------------------------------------

inline json audit_report_to_json(const AuditReport& r) {
    return json{{"schema", kSchemaTag},
                {"symmetry", symmetry_name(r.symmetry)},
                {"residual_max", r.residual_max},
                {"residual_mean", r.residual_mean},
                {"trials", r.trials_run},
                {"worst_seed", r.worst_seed},
                {"tolerance", r.tolerance},
                {"pass", r.pass}};
}

// --- Train configs and run records --------------------------------------------

/// Parsed train config; the model may be given inline or as a file path the
/// caller resolves.
struct TrainConfigFile {
    TrainConfig cfg;
    std::optional<std::string> model_path;
};

inline TrainConfigFile train_config_from_json(const json& j,
                                              const std::string& context = "train config") {
    detail::require_schema(j, context);
    TrainConfigFile out;
    const std::string task = detail::require_field(j, "task", context).get<std::string>();
    if (task == "copy") {
        out.cfg.task = TrainTask::Copy;
    } else if (task == "reverse") {
        out.cfg.task = TrainTask::Reverse;
    } else {
        throw InvalidInputError(context + ".task: expected \"copy\" or \"reverse\", got \"" +
                                task + "\"");
    }
    out.cfg.d = detail::require_field(j, "d", context).get<int>();
    out.cfg.n = detail::require_field(j, "n", context).get<int>();
    out.cfg.steps = detail::require_field(j, "steps", context).get<int>();
    out.cfg.lr = detail::require_field(j, "lr", context).get<double>();
    out.cfg.seed = detail::require_field(j, "seed", context).get<std::uint64_t>();
    if (out.cfg.steps < 1) throw InvalidInputError(context + ".steps: must be >= 1");
    if (!(out.cfg.lr > 0.0)) throw InvalidInputError(context + ".lr: must be positive");
    if (j.contains("init")) {
        const std::string init = j.at("init").get<std::string>();
        if (init == "gaussian") {
            out.cfg.init = InitMode::Gaussian;
        } else if (init == "keep") {
            out.cfg.init = InitMode::Keep;
        } else {
            throw InvalidInputError(context + ".init: expected \"gaussian\" or \"keep\"");
        }
    }
    const json& model = detail::require_field(j, "model", context);
    if (model.is_string()) {
        out.model_path = model.get<std::string>();
    } else {
        out.cfg.model = model_from_json(model, context + ".model");
    }
    return out;
}

inline json train_config_to_json(const TrainConfig& cfg) {
    return json{{"schema", kSchemaTag},
                {"task", train_task_name(cfg.task)},
                {"d", cfg.d},
                {"n", cfg.n},
                {"steps", cfg.steps},
                {"lr", cfg.lr},
                {"seed", cfg.seed},
                {"init", cfg.init == InitMode::Gaussian ? "gaussian" : "keep"},
                {"model", model_to_json(cfg.model)}};
}

/// Serialized run record. Wall-clock time is reported on the console only:
/// output files must be byte-identical across re-runs.
inline json run_record_to_json(const RunRecord& r) {
    json audits = json::array();
    for (const AuditReport& a : r.audits) audits.push_back(audit_report_to_json(a));
    json j{{"schema", kSchemaTag},
           {"config", train_config_to_json(r.config)},
           {"loss", r.loss},
           {"initial_loss", r.initial_loss},
           {"final_loss", r.final_loss},
           {"converged", r.converged},
           {"diverged", r.diverged},
           {"audits", audits}};
    if (r.diverged) j["diverged_step"] = r.diverged_step;
    return j;
}

} // namespace equiseq
