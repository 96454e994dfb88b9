#include "pcnet/network.hpp"

#include <cmath>

#include <fmt/format.h>

namespace pcnet {

std::string backbone_param_name(std::size_t layer, bool bias) {
    return fmt::format("backbone.{}.{}", layer, bias ? "bias" : "weight");
}

std::string decoder_param_name(std::size_t pcoder, std::size_t layer, bool bias) {
    return fmt::format("pcoder{}.decoder.{}.{}", pcoder + 1, layer, bias ? "bias" : "weight");
}

double PCoder::gradient_scale() const {
    const double k = static_cast<double>(K);
    return std::sqrt(k * k / static_cast<double>(C));
}

Tensor as_batch(const Tensor& image) {
    if (image.rank() == 3) return image.reshaped(with_batch(image.shape()));
    if (image.rank() == 4) return image;
    throw ShapeError("expected an image (C, H, W) or batch (N, C, H, W), got " + shape_str(image.shape()));
}

namespace {

// Fetches a layer's parameters by name, or initializes them when allowed.
// Returns true when the parameters were freshly initialized.
bool resolve_params(Layer& layer, const Shape& in, const WeightMap& weights, const std::string& wname,
                    const std::string& bname, std::optional<std::uint64_t> seed, std::uint64_t stream) {
    if (!layer.desc.has_params()) return false;
    const Shape ks = kernel_shape(layer.desc, in);
    const Shape bs{layer.desc.kind == LayerKind::deconv ? ks[1] : ks[0]};
    auto w = weights.find(wname);
    auto b = weights.find(bname);
    if (w == weights.end() || b == weights.end()) {
        if (!seed) throw ValidationError("missing weight entry '" + (w == weights.end() ? wname : bname) + "'");
        Rng rng = Rng::stream(*seed, stream);
        layer.params = init_layer_weights(layer.desc, in, rng);
        return true;
    }
    if (w->second.shape() != ks)
        throw ValidationError("weight entry '" + wname + "' has shape " + shape_str(w->second.shape()) + ", expected " +
                              shape_str(ks));
    if (b->second.shape() != bs)
        throw ValidationError("weight entry '" + bname + "' has shape " + shape_str(b->second.shape()) + ", expected " +
                              shape_str(bs));
    layer.params = LayerWeights{w->second, b->second, layer.desc.stride, layer.desc.padding};
    return false;
}

}  // namespace

PCNetwork build_network(const NetworkSpec& spec, const WeightMap& weights, std::optional<std::uint64_t> init_seed) {
    validate_spec(spec);
    PCNetwork net;
    net.spec_ = spec;

    Shape cur = spec.backbone.input_size;
    for (std::size_t i = 0; i < spec.backbone.layers.size(); ++i) {
        Layer l{spec.backbone.layers[i], {}};
        if (resolve_params(l, cur, weights, backbone_param_name(i, false), backbone_param_name(i, true), init_seed, i))
            net.backbone_frozen_ = false;
        cur = layer_output_shape(l.desc, cur);
        net.backbone_.push_back(std::move(l));
    }

    const auto shapes = representation_shapes(spec);
    std::size_t first = 0;
    for (std::size_t i = 0; i < spec.pcoders.size(); ++i) {
        PCoder pc;
        pc.first_layer = first;
        pc.last_layer = spec.pcoders[i].boundary;
        first = pc.last_layer + 1;
        pc.hp = spec.pcoders[i].hp;
        pc.predicted_shape = shapes[i];
        pc.output_shape = shapes[i + 1];
        pc.K = shape_numel(pc.predicted_shape);

        Shape s = pc.output_shape;
        const auto descs = resolved_decoder(spec, i);
        for (std::size_t j = 0; j < descs.size(); ++j) {
            Layer l{descs[j], {}};
            resolve_params(l, s, weights, decoder_param_name(i, j, false), decoder_param_name(i, j, true), init_seed,
                           10000 + 100 * i + j);
            if (l.desc.kind == LayerKind::deconv) pc.C = l.desc.kernel * l.desc.kernel * pc.predicted_shape[0];
            s = layer_output_shape(l.desc, s);
            pc.decoder.push_back(std::move(l));
        }
        if (s != pc.predicted_shape) throw ValidationError(fmt::format("PCoder {} decoder output shape mismatch", i + 1));
        net.pcoders_.push_back(std::move(pc));
    }
    return net;
}

std::size_t PCNetwork::class_count() const {
    Shape s = spec_.backbone.input_size;
    for (const auto& l : spec_.backbone.layers) s = layer_output_shape(l, s);
    return s.at(0);
}

std::span<const Layer> PCNetwork::encoder_layers(std::size_t i) const {
    const PCoder& pc = pcoders_.at(i);
    return std::span<const Layer>(backbone_).subspan(pc.first_layer, pc.last_layer - pc.first_layer + 1);
}

std::span<const Layer> PCNetwork::head_layers() const {
    return std::span<const Layer>(backbone_).subspan(pcoders_.back().last_layer + 1);
}

Tensor PCNetwork::encode(std::size_t i, const Tensor& x, SequenceTrace* trace) const {
    return forward(encoder_layers(i), x, trace);
}

Tensor PCNetwork::decode(std::size_t i, const Tensor& e, SequenceTrace* trace) const {
    return forward(pcoders_.at(i).decoder, e, trace);
}

Tensor PCNetwork::head(const Tensor& top) const { return forward(head_layers(), top); }

Tensor PCNetwork::backbone_logits(const Tensor& image) const {
    Tensor x = as_batch(image);
    if (Shape(x.shape().begin() + 1, x.shape().end()) != spec_.backbone.input_size)
        throw ShapeError("input " + shape_str(image.shape()) + " does not match input_size " +
                         shape_str(spec_.backbone.input_size));
    return forward(backbone_, x);
}

WeightMap PCNetwork::backbone_weights() const {
    WeightMap m;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
        if (!backbone_[i].desc.has_params()) continue;
        m[backbone_param_name(i, false)] = backbone_[i].params.kernel;
        m[backbone_param_name(i, true)] = backbone_[i].params.bias;
    }
    return m;
}

WeightMap PCNetwork::decoder_weights() const {
    WeightMap m;
    for (std::size_t i = 0; i < pcoders_.size(); ++i)
        for (std::size_t j = 0; j < pcoders_[i].decoder.size(); ++j) {
            const Layer& l = pcoders_[i].decoder[j];
            if (!l.desc.has_params()) continue;
            m[decoder_param_name(i, j, false)] = l.params.kernel;
            m[decoder_param_name(i, j, true)] = l.params.bias;
        }
    return m;
}

WeightMap PCNetwork::weights() const {
    WeightMap m = backbone_weights();
    m.merge(decoder_weights());
    return m;
}

PCNetwork PCNetwork::with_hyperparams(const std::vector<HyperParams>& hps) const {
    if (hps.size() != pcoders_.size())
        throw ValidationError(fmt::format("expected {} hyperparameter triples, got {}", pcoders_.size(), hps.size()));
    PCNetwork copy = *this;
    for (std::size_t i = 0; i < hps.size(); ++i) {
        validate_hyperparams(hps[i]);
        copy.pcoders_[i].hp = hps[i];
        copy.spec_.pcoders[i].hp = hps[i];
    }
    if (copy.spec_.shared_hyperparameters)
        for (const auto& hp : hps)
            if (!(hp == hps.front())) copy.spec_.shared_hyperparameters = false;
    return copy;
}

PCNetwork PCNetwork::with_weights(const WeightMap& w) const {
    WeightMap merged = weights();
    for (const auto& [k, v] : w) {
        auto it = merged.find(k);
        if (it == merged.end()) throw ValidationError("unknown weight entry '" + k + "'");
        it->second = v;
    }
    PCNetwork rebuilt = build_network(spec_, merged);
    bool replaces_backbone = true;
    for (const auto& [k, v] : backbone_weights()) replaces_backbone = replaces_backbone && w.contains(k);
    rebuilt.backbone_frozen_ = backbone_frozen_ || replaces_backbone;
    return rebuilt;
}

PCNetwork PCNetwork::with_gradient_scaling(bool on) const {
    PCNetwork copy = *this;
    copy.spec_.gradient_scaling = on;
    return copy;
}

}  // namespace pcnet
