#include "pcnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "toml.hpp"

namespace pcnet {

namespace {

std::size_t line_of(const toml::node& n) { return n.source().begin.line; }

[[noreturn]] void fail(const std::string& what, const toml::node& at) { throw ConfigError(what, line_of(at)); }

void reject_unknown_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, const std::string& where) {
    for (auto&& [key, node] : t) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key.str() == a;
        if (!ok) fail(fmt::format("unknown key '{}' in {}", key.str(), where), node);
    }
}

std::size_t read_count(const toml::table& t, std::string_view key, std::optional<std::size_t> fallback,
                       const toml::node& ctx) {
    const toml::node* n = t.get(key);
    if (!n) {
        if (fallback) return *fallback;
        fail(fmt::format("missing required key '{}'", key), ctx);
    }
    auto v = n->value<std::int64_t>();
    if (!v || !n->is_integer()) fail(fmt::format("'{}' must be an integer", key), *n);
    if (*v < 0) fail(fmt::format("'{}' must be non-negative", key), *n);
    return static_cast<std::size_t>(*v);
}

double read_real(const toml::table& t, std::string_view key, double fallback) {
    const toml::node* n = t.get(key);
    if (!n) return fallback;
    if (!n->is_number()) fail(fmt::format("'{}' must be a number", key), *n);
    return *n->value<double>();
}

bool read_bool(const toml::table& t, std::string_view key, bool fallback) {
    const toml::node* n = t.get(key);
    if (!n) return fallback;
    if (!n->is_boolean()) fail(fmt::format("'{}' must be a boolean", key), *n);
    return *n->value<bool>();
}

LayerDesc parse_layer(const toml::node& node) {
    const toml::table* t = node.as_table();
    if (!t) fail("layer descriptor must be a table, e.g. { type = \"relu\" }", node);
    const toml::node* type = t->get("type");
    if (!type || !type->is_string()) fail("layer descriptor needs a string 'type'", node);
    auto kind = parse_layer_kind(*type->value<std::string>());
    if (!kind) fail(fmt::format("unknown layer type '{}'", *type->value<std::string>()), *type);
    LayerDesc d;
    d.kind = *kind;
    if (const toml::node* l = t->get("label")) {
        if (!l->is_string()) fail("'label' must be a string", *l);
        d.label = *l->value<std::string>();
    }
    switch (d.kind) {
        case LayerKind::conv:
        case LayerKind::deconv:
            reject_unknown_keys(*t, {"type", "label", "out_channels", "kernel", "stride", "padding"}, to_string(d.kind));
            d.out_channels = read_count(*t, "out_channels", std::nullopt, node);
            d.kernel = read_count(*t, "kernel", std::nullopt, node);
            d.stride = read_count(*t, "stride", 1, node);
            d.padding = read_count(*t, "padding", 0, node);
            break;
        case LayerKind::upsample:
            reject_unknown_keys(*t, {"type", "label", "factor"}, "upsample");
            d.factor = read_count(*t, "factor", std::nullopt, node);
            break;
        case LayerKind::dense:
            reject_unknown_keys(*t, {"type", "label", "out_features"}, "dense");
            d.out_features = read_count(*t, "out_features", std::nullopt, node);
            break;
        default: reject_unknown_keys(*t, {"type", "label"}, to_string(d.kind)); break;
    }
    return d;
}

std::vector<LayerDesc> parse_layer_list(const toml::node& node, const char* what) {
    const toml::array* arr = node.as_array();
    if (!arr) fail(fmt::format("'{}' must be an array of layer tables", what), node);
    std::vector<LayerDesc> out;
    for (const toml::node& el : *arr) out.push_back(parse_layer(el));
    return out;
}

HyperParams parse_hyperparams(const toml::node& node) {
    const toml::table* t = node.as_table();
    if (!t) fail("'hyperparameters' must be a table {feedforward, feedback, pc}", node);
    reject_unknown_keys(*t, {"feedforward", "feedback", "pc"}, "hyperparameters");
    HyperParams defaults;
    HyperParams hp{read_real(*t, "feedforward", defaults.beta), read_real(*t, "feedback", defaults.lambda),
                   read_real(*t, "pc", defaults.alpha)};
    if (auto v = check_hyperparams(hp)) throw ValidationError(fmt::format("line {}: {}", line_of(node), v->message));
    return hp;
}

std::size_t resolve_module(const toml::node& node, const BackboneSpec& bb) {
    if (node.is_integer()) {
        const auto v = *node.value<std::int64_t>();
        if (v < 0 || static_cast<std::size_t>(v) >= bb.layers.size())
            throw ValidationError(fmt::format("line {}: module index {} outside backbone layers [0, {})", line_of(node), v,
                                              bb.layers.size()));
        return static_cast<std::size_t>(v);
    }
    if (node.is_string()) {
        const std::string label = *node.value<std::string>();
        for (std::size_t i = 0; i < bb.layers.size(); ++i)
            if (bb.layers[i].label == label) return i;
        throw ValidationError(fmt::format("line {}: no backbone layer labelled '{}'", line_of(node), label));
    }
    fail("'module' must be a layer index or label", node);
}

std::string fmt_real(double v) {
    std::string s = fmt::format("{}", v);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string fmt_layer(const LayerDesc& d) {
    std::string s = fmt::format("{{ type = \"{}\"", to_string(d.kind));
    switch (d.kind) {
        case LayerKind::conv:
        case LayerKind::deconv:
            s += fmt::format(", out_channels = {}, kernel = {}, stride = {}, padding = {}", d.out_channels, d.kernel,
                             d.stride, d.padding);
            break;
        case LayerKind::upsample: s += fmt::format(", factor = {}", d.factor); break;
        case LayerKind::dense: s += fmt::format(", out_features = {}", d.out_features); break;
        default: break;
    }
    if (!d.label.empty()) s += fmt::format(", label = \"{}\"", d.label);
    return s + " }";
}

std::string fmt_hp(const HyperParams& hp) {
    return fmt::format("{{ feedforward = {}, feedback = {}, pc = {} }}", fmt_real(hp.beta), fmt_real(hp.lambda),
                       fmt_real(hp.alpha));
}

}  // namespace

NetworkSpec parse_config(std::string_view text) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        throw ConfigError(std::string(e.description()), e.source().begin.line);
    }
    reject_unknown_keys(root,
                        {"name", "input_size", "gradient_scaling", "shared_hyperparameters", "hyperparameters",
                         "backbone", "pcoders"},
                        "top-level table");

    NetworkSpec spec;
    if (const toml::node* n = root.get("name")) {
        if (!n->is_string()) fail("'name' must be a string", *n);
        spec.name = *n->value<std::string>();
    }
    const toml::node* in = root.get("input_size");
    if (!in) throw ConfigError("missing required key 'input_size'", 1);
    const toml::array* in_arr = in->as_array();
    if (!in_arr || in_arr->size() != 3) fail("'input_size' must be an array of 3 integers [C, H, W]", *in);
    for (const toml::node& v : *in_arr) {
        auto x = v.value<std::int64_t>();
        if (!v.is_integer() || *x <= 0) fail("'input_size' entries must be positive integers", v);
        spec.backbone.input_size.push_back(static_cast<std::size_t>(*x));
    }
    spec.gradient_scaling = read_bool(root, "gradient_scaling", false);
    spec.shared_hyperparameters = read_bool(root, "shared_hyperparameters", false);

    const toml::node* bb_node = root.get("backbone");
    if (!bb_node || !bb_node->is_table()) throw ConfigError("missing [backbone] table", 1);
    const toml::table& bb = *bb_node->as_table();
    reject_unknown_keys(bb, {"name", "layers", "head_start"}, "[backbone]");
    if (const toml::node* n = bb.get("name")) {
        if (!n->is_string()) fail("backbone 'name' must be a string", *n);
        spec.backbone.name = *n->value<std::string>();
    }
    const toml::node* layers = bb.get("layers");
    if (!layers) fail("[backbone] needs a 'layers' array", *bb_node);
    spec.backbone.layers = parse_layer_list(*layers, "layers");
    if (bb.get("head_start")) {
        spec.backbone.head_start = read_count(bb, "head_start", std::nullopt, *bb_node);
    } else {
        spec.backbone.head_start = spec.backbone.layers.size();
        for (std::size_t i = 0; i < spec.backbone.layers.size(); ++i)
            if (spec.backbone.layers[i].kind == LayerKind::flatten) {
                spec.backbone.head_start = i;
                break;
            }
    }

    std::optional<HyperParams> shared;
    if (const toml::node* n = root.get("hyperparameters")) {
        if (!spec.shared_hyperparameters)
            fail("top-level 'hyperparameters' requires shared_hyperparameters = true", *n);
        shared = parse_hyperparams(*n);
    }

    const toml::node* pc_node = root.get("pcoders");
    if (!pc_node) throw ConfigError("at least one [[pcoders]] entry is required", 1);
    const toml::array* pcs = pc_node->as_array();
    if (!pcs || pcs->empty()) fail("'pcoders' must be a non-empty array of tables", *pc_node);
    for (const toml::node& el : *pcs) {
        const toml::table* t = el.as_table();
        if (!t) fail("each [[pcoders]] entry must be a table", el);
        reject_unknown_keys(*t, {"module", "predictor", "hyperparameters"}, "[[pcoders]]");
        const toml::node* m = t->get("module");
        if (!m) fail("[[pcoders]] entry needs 'module'", el);
        PCoderSpec pc;
        pc.boundary = resolve_module(*m, spec.backbone);
        if (const toml::node* p = t->get("predictor")) {
            if (p->is_string()) {
                if (*p->value<std::string>() != "default")
                    fail("'predictor' must be \"default\" or an array of layer tables", *p);
            } else {
                pc.predictor = parse_layer_list(*p, "predictor");
            }
        }
        if (const toml::node* h = t->get("hyperparameters")) {
            if (spec.shared_hyperparameters)
                fail("per-PCoder 'hyperparameters' conflict with shared_hyperparameters = true", *h);
            pc.hp = parse_hyperparams(*h);
        } else if (shared) {
            pc.hp = *shared;
        }
        spec.pcoders.push_back(std::move(pc));
    }

    validate_spec(spec);
    return spec;
}

NetworkSpec load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const NetworkSpec& spec) {
    std::string out;
    out += fmt::format("name = \"{}\"\n", spec.name);
    const auto& in = spec.backbone.input_size;
    out += fmt::format("input_size = [{}, {}, {}]\n", in.at(0), in.at(1), in.at(2));
    out += fmt::format("gradient_scaling = {}\n", spec.gradient_scaling);
    out += fmt::format("shared_hyperparameters = {}\n", spec.shared_hyperparameters);
    if (spec.shared_hyperparameters && !spec.pcoders.empty())
        out += fmt::format("hyperparameters = {}\n", fmt_hp(spec.pcoders.front().hp));
    out += "\n[backbone]\n";
    out += fmt::format("name = \"{}\"\n", spec.backbone.name);
    out += fmt::format("head_start = {}\n", spec.backbone.head_start);
    out += "layers = [\n";
    for (const auto& l : spec.backbone.layers) out += "  " + fmt_layer(l) + ",\n";
    out += "]\n";
    for (const auto& pc : spec.pcoders) {
        out += "\n[[pcoders]]\n";
        const std::string& label = spec.backbone.layers.at(pc.boundary).label;
        if (!label.empty())
            out += fmt::format("module = \"{}\"\n", label);
        else
            out += fmt::format("module = {}\n", pc.boundary);
        if (pc.predictor) {
            out += "predictor = [";
            for (std::size_t i = 0; i < pc.predictor->size(); ++i)
                out += (i ? ", " : "") + fmt_layer((*pc.predictor)[i]);
            out += "]\n";
        }
        if (!spec.shared_hyperparameters) out += fmt::format("hyperparameters = {}\n", fmt_hp(pc.hp));
    }
    return out;
}

std::vector<LayerDesc> default_decoder(const Shape& encoder_out, const Shape& predicted) {
    if (encoder_out.size() != 3 || predicted.size() != 3)
        throw ValidationError("default decoder needs (C, H, W) shapes, got " + shape_str(encoder_out) + " -> " +
                              shape_str(predicted));
    const std::size_t h_in = predicted[1], w_in = predicted[2], h_out = encoder_out[1], w_out = encoder_out[2];
    if (h_in % h_out != 0 || w_in % w_out != 0 || h_in / h_out != w_in / w_out)
        throw ValidationError(fmt::format(
            "default decoder needs an integer upscaling factor, {}x{} -> {}x{} is not; give an explicit predictor", h_out,
            w_out, h_in, w_in));
    std::vector<LayerDesc> dec;
    const std::size_t factor = h_in / h_out;
    if (factor > 1) dec.push_back(LayerDesc{.kind = LayerKind::upsample, .factor = factor, .label = {}});
    dec.push_back(LayerDesc{.kind = LayerKind::deconv, .out_channels = predicted[0], .kernel = 3, .stride = 1, .padding = 1, .label = {}});
    return dec;
}

std::vector<Shape> representation_shapes(const NetworkSpec& spec) {
    std::vector<Shape> shapes{spec.backbone.input_size};
    Shape cur = spec.backbone.input_size;
    std::size_t next = 0;
    for (const auto& pc : spec.pcoders) {
        for (; next <= pc.boundary; ++next) cur = layer_output_shape(spec.backbone.layers.at(next), cur);
        shapes.push_back(cur);
    }
    return shapes;
}

std::vector<LayerDesc> resolved_decoder(const NetworkSpec& spec, std::size_t i) {
    const auto& pc = spec.pcoders.at(i);
    if (pc.predictor) return *pc.predictor;
    auto shapes = representation_shapes(spec);
    return default_decoder(shapes[i + 1], shapes[i]);
}

void validate_spec(const NetworkSpec& spec) {
    const BackboneSpec& bb = spec.backbone;
    if (bb.input_size.size() != 3) throw ValidationError("input_size must be [C, H, W]");
    if (bb.layers.empty()) throw ValidationError("backbone has no layers");

    std::size_t flattens = 0, flatten_at = 0;
    for (std::size_t i = 0; i < bb.layers.size(); ++i)
        if (bb.layers[i].kind == LayerKind::flatten) {
            ++flattens;
            flatten_at = i;
        }
    if (flattens != 1) throw ValidationError(fmt::format("backbone needs exactly one flatten layer, found {}", flattens));
    if (bb.head_start >= bb.layers.size() || flatten_at < bb.head_start)
        throw ValidationError(fmt::format("flatten (layer {}) must be located at or after head_start ({})", flatten_at,
                                          bb.head_start));
    for (std::size_t i = 0; i < bb.head_start; ++i)
        if (bb.layers[i].kind == LayerKind::dense)
            throw ValidationError(fmt::format("dense layer {} lies before the classification head", i));

    Shape cur = bb.input_size;
    for (std::size_t i = 0; i < bb.layers.size(); ++i) {
        try {
            cur = layer_output_shape(bb.layers[i], cur);
        } catch (const ShapeError& e) {
            throw ValidationError(fmt::format("backbone layer {} ({}): {}", i, to_string(bb.layers[i].kind), e.what()));
        }
    }
    if (cur.size() != 1) throw ValidationError("backbone must end in a vector of class logits");

    if (spec.pcoders.empty()) throw ValidationError("at least one PCoder is required");
    std::set<std::string> labels;
    for (const auto& l : bb.layers)
        if (!l.label.empty() && !labels.insert(l.label).second)
            throw ValidationError("duplicate backbone layer label '" + l.label + "'");
    for (std::size_t i = 0; i < spec.pcoders.size(); ++i) {
        const auto b = spec.pcoders[i].boundary;
        if (i > 0 && b <= spec.pcoders[i - 1].boundary)
            throw ValidationError(fmt::format("PCoder {} module (layer {}) must come after PCoder {} (layer {})", i + 1, b,
                                              i, spec.pcoders[i - 1].boundary));
        if (b >= bb.head_start)
            throw ValidationError(
                fmt::format("PCoder {} module (layer {}) is not before head_start ({})", i + 1, b, bb.head_start));
        validate_hyperparams(spec.pcoders[i].hp);
        if (spec.shared_hyperparameters && !(spec.pcoders[i].hp == spec.pcoders[0].hp))
            throw ValidationError("shared_hyperparameters = true but PCoders carry different values");
    }

    const auto shapes = representation_shapes(spec);
    for (std::size_t i = 0; i < spec.pcoders.size(); ++i) {
        const auto dec = resolved_decoder(spec, i);
        bool has_deconv = false;
        Shape s = shapes[i + 1];
        for (const auto& l : dec) {
            if (l.kind == LayerKind::flatten || l.kind == LayerKind::dense)
                throw ValidationError(fmt::format("PCoder {} predictor may not contain {}", i + 1, to_string(l.kind)));
            has_deconv = has_deconv || l.kind == LayerKind::deconv;
            try {
                s = layer_output_shape(l, s);
            } catch (const ShapeError& e) {
                throw ValidationError(fmt::format("PCoder {} predictor: {}", i + 1, e.what()));
            }
        }
        if (!has_deconv) throw ValidationError(fmt::format("PCoder {} predictor needs a deconv layer", i + 1));
        if (s != shapes[i])
            throw ValidationError(fmt::format("PCoder {} predictor outputs {} but the predicted layer is {}", i + 1,
                                              shape_str(s), shape_str(shapes[i])));
    }
}

}  // namespace pcnet
