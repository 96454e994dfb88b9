#include "pcnet/layers.hpp"

#include <cmath>

namespace pcnet {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::deconv: return "deconv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2: return "maxpool2";
        case LayerKind::upsample: return "upsample";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
    }
    return "?";
}

std::optional<LayerKind> parse_layer_kind(const std::string& name) {
    for (auto k : {LayerKind::conv, LayerKind::deconv, LayerKind::relu, LayerKind::maxpool2, LayerKind::upsample,
                   LayerKind::flatten, LayerKind::dense})
        if (to_string(k) == name) return k;
    return std::nullopt;
}

Shape with_batch(const Shape& sample_shape, std::size_t n) {
    Shape s{n};
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    return s;
}

namespace {

void require_image(const LayerDesc& d, const Shape& in) {
    if (in.size() != 3)
        throw ShapeError(to_string(d.kind) + " expects a (C, H, W) input, got " + shape_str(in));
}

}  // namespace

Shape kernel_shape(const LayerDesc& d, const Shape& in) {
    switch (d.kind) {
        case LayerKind::conv: require_image(d, in); return {d.out_channels, in[0], d.kernel, d.kernel};
        case LayerKind::deconv: require_image(d, in); return {in[0], d.out_channels, d.kernel, d.kernel};
        case LayerKind::dense: return {d.out_features, shape_numel(in)};
        default: return {};
    }
}

Shape layer_output_shape(const LayerDesc& d, const Shape& in) {
    switch (d.kind) {
        case LayerKind::conv:
        case LayerKind::deconv: {
            require_image(d, in);
            if (d.out_channels == 0 || d.kernel == 0 || d.stride == 0)
                throw ShapeError(to_string(d.kind) + ": out_channels, kernel and stride must be positive");
            if (d.padding >= d.kernel)
                throw ShapeError(to_string(d.kind) + ": padding must be smaller than the kernel");
            if (d.kind == LayerKind::conv)
                return {d.out_channels, conv_out_extent(in[1], d.kernel, d.stride, d.padding),
                        conv_out_extent(in[2], d.kernel, d.stride, d.padding)};
            return {d.out_channels, deconv_out_extent(in[1], d.kernel, d.stride, d.padding),
                    deconv_out_extent(in[2], d.kernel, d.stride, d.padding)};
        }
        case LayerKind::relu: return in;
        case LayerKind::maxpool2:
            require_image(d, in);
            if (in[1] % 2 || in[2] % 2) throw ShapeError("maxpool2: spatial extent must be even, got " + shape_str(in));
            return {in[0], in[1] / 2, in[2] / 2};
        case LayerKind::upsample:
            require_image(d, in);
            if (d.factor == 0) throw ShapeError("upsample: factor must be >= 1");
            return {in[0], in[1] * d.factor, in[2] * d.factor};
        case LayerKind::flatten: return {shape_numel(in)};
        case LayerKind::dense:
            if (d.out_features == 0) throw ShapeError("dense: out_features must be positive");
            return {d.out_features};
    }
    throw ShapeError("unknown layer kind");
}

LayerWeights init_layer_weights(const LayerDesc& d, const Shape& in, Rng& rng) {
    if (!d.has_params()) return {};
    const Shape ks = kernel_shape(d, in);
    std::size_t fan_in = 0;
    std::size_t bias_n = 0;
    switch (d.kind) {
        case LayerKind::conv: fan_in = in[0] * d.kernel * d.kernel; bias_n = d.out_channels; break;
        case LayerKind::deconv: fan_in = in[0] * d.kernel * d.kernel; bias_n = d.out_channels; break;
        default: fan_in = shape_numel(in); bias_n = d.out_features; break;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    LayerWeights w;
    w.kernel = Tensor(ks);
    for (float& v : w.kernel.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    w.bias = Tensor({bias_n});
    for (float& v : w.bias.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    w.stride = d.stride;
    w.padding = d.padding;
    return w;
}

Tensor forward(std::span<const Layer> layers, const Tensor& x, SequenceTrace* trace) {
    if (trace) {
        trace->inputs.clear();
        trace->pool_indices.assign(layers.size(), {});
    }
    Tensor cur = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (trace) trace->inputs.push_back(cur);
        switch (l.desc.kind) {
            case LayerKind::conv: cur = conv2d(cur, l.params); break;
            case LayerKind::deconv: cur = deconv2d(cur, l.params); break;
            case LayerKind::relu: cur = relu(cur); break;
            case LayerKind::maxpool2: {
                PoolResult r = maxpool2(cur);
                if (trace) trace->pool_indices[i] = std::move(r.indices);
                cur = std::move(r.output);
                break;
            }
            case LayerKind::upsample: cur = upsample_nearest(cur, l.desc.factor); break;
            case LayerKind::flatten: cur = cur.reshaped({cur.dim(0), cur.numel() / cur.dim(0)}); break;
            case LayerKind::dense: cur = dense(cur, l.params.kernel, l.params.bias); break;
        }
    }
    return cur;
}

Tensor backward(std::span<const Layer> layers, const SequenceTrace& trace, const Tensor& grad_out,
                std::vector<ParamGrad>* grads) {
    if (trace.inputs.size() != layers.size()) throw std::logic_error("backward: trace does not match layers");
    if (grads) grads->assign(layers.size(), {});
    Tensor g = grad_out;
    for (std::size_t i = layers.size(); i-- > 0;) {
        const Layer& l = layers[i];
        const Tensor& in = trace.inputs[i];
        switch (l.desc.kind) {
            case LayerKind::conv:
                if (grads) {
                    ConvGrads cg = conv2d_backward(in, l.params, g);
                    (*grads)[i] = {std::move(cg.kernel), std::move(cg.bias)};
                    g = std::move(cg.input);
                } else {
                    g = conv2d_backward_input(in.shape(), l.params, g);
                }
                break;
            case LayerKind::deconv:
                if (grads) {
                    ConvGrads cg = deconv2d_backward(in, l.params, g);
                    (*grads)[i] = {std::move(cg.kernel), std::move(cg.bias)};
                    g = std::move(cg.input);
                } else {
                    g = deconv2d_backward_input(l.params, g);
                }
                break;
            case LayerKind::relu: g = relu_backward(in, g); break;
            case LayerKind::maxpool2: g = maxpool2_backward(trace.pool_indices[i], g, in.shape()); break;
            case LayerKind::upsample: g = upsample_backward(g, l.desc.factor); break;
            case LayerKind::flatten: g = g.reshaped(in.shape()); break;
            case LayerKind::dense: {
                DenseGrads dg = dense_backward(in, l.params.kernel, g);
                if (grads) (*grads)[i] = {std::move(dg.weight), std::move(dg.bias)};
                g = std::move(dg.input);
                break;
            }
        }
    }
    return g;
}

}  // namespace pcnet
