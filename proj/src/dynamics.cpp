#include "pcnet/dynamics.hpp"

#include <fmt/format.h>

namespace pcnet {

namespace {

void predict(const PCNetwork& net, PCNetworkState& s, std::size_t i) {
    s.d[i] = net.decode(i, s.e[i + 1], &s.decoder_cache[i]);
    s.residual[i] = s.e[i] - s.d[i];
    s.eps[i] = sum_squares(s.residual[i]) / static_cast<double>(s.residual[i].numel());
}

}  // namespace

PCNetworkState init_feedforward_sweep(const PCNetwork& net, const Tensor& image) {
    Tensor x = as_batch(image);
    if (x.dim(0) != 1 || Shape(x.shape().begin() + 1, x.shape().end()) != net.spec().backbone.input_size)
        throw ShapeError("image " + shape_str(image.shape()) + " does not match input_size " +
                         shape_str(net.spec().backbone.input_size));
    const std::size_t n = net.size();
    PCNetworkState s;
    s.e.reserve(n + 1);
    s.e.push_back(std::move(x));
    for (std::size_t i = 0; i < n; ++i) s.e.push_back(net.encode(i, s.e[i]));
    s.d.resize(n);
    s.residual.resize(n);
    s.eps.resize(n);
    s.decoder_cache.resize(n);
    for (std::size_t i = 0; i < n; ++i) predict(net, s, i);
    s.t = 0;
    return s;
}

Tensor error_gradient(const PCNetwork& net, const PCNetworkState& state, std::size_t n) {
    return error_gradient(net, state, n, net.gradient_scaling());
}

Tensor error_gradient(const PCNetwork& net, const PCNetworkState& state, std::size_t n, bool gradient_scaling) {
    if (!state.initialized()) throw StateError("error_gradient: state has not been initialized by a feedforward sweep");
    if (n < 1 || n > net.size())
        throw std::out_of_range(fmt::format("error_gradient: layer {} outside 1..{}", n, net.size()));
    const std::size_t i = n - 1;
    const PCoder& pc = net.pcoder(i);
    if (state.decoder_cache[i].inputs.size() != pc.decoder.size())
        throw StateError("error_gradient: decoder cache is stale");
    // d eps / d d_{n-1} = -(2/K) * residual
    Tensor g = state.residual[i] * (-2.0f / static_cast<float>(pc.K));
    g = backward(pc.decoder, state.decoder_cache[i], g);
    if (gradient_scaling) g *= static_cast<float>(pc.gradient_scale());
    return g;
}

Tensor pcoder_update(const Tensor& e_prev, const Tensor& ff, const Tensor* fb, const Tensor& grad, const HyperParams& hp) {
    validate_hyperparams(hp);
    require_same_shape(e_prev, ff, "pcoder_update feedforward");
    require_same_shape(e_prev, grad, "pcoder_update gradient");
    if (fb) require_same_shape(e_prev, *fb, "pcoder_update feedback");
    const double memory = 1.0 - hp.beta - hp.lambda;
    Tensor out(e_prev.shape());
    // Double accumulation keeps the convex combination inside its operands' range.
    for (std::size_t k = 0; k < out.numel(); ++k) {
        double v = memory * e_prev[k];
        if (hp.beta != 0.0) v += hp.beta * ff[k];
        if (fb && hp.lambda != 0.0) v += hp.lambda * (*fb)[k];
        if (hp.alpha != 0.0) v -= hp.alpha * grad[k];
        out[k] = static_cast<float>(v);
    }
    return out;
}

void step(const PCNetwork& net, PCNetworkState& s) {
    if (!s.initialized()) throw StateError("step: state has not been initialized by a feedforward sweep");
    const std::size_t n = net.size();
    for (std::size_t i = 0; i < n; ++i) {
        const PCoder& pc = net.pcoder(i);
        Tensor ff = net.encode(i, s.e[i]);
        const Tensor* fb = i + 1 < n ? &s.d[i + 1] : nullptr;
        Tensor grad = error_gradient(net, s, i + 1);
        s.e[i + 1] = pcoder_update(s.e[i + 1], ff, fb, grad, pc.hp);
        predict(net, s, i);
    }
    ++s.t;
}

Tensor state_logits(const PCNetwork& net, const PCNetworkState& state) {
    if (!state.initialized()) throw StateError("state_logits: state has not been initialized");
    Tensor l = net.head(state.e.back());
    return l.reshaped({l.numel()});
}

std::vector<TimestepOutput> run_dynamics(const PCNetwork& net, const Tensor& image, std::size_t timesteps,
                                         bool keep_representations) {
    std::vector<TimestepOutput> out;
    out.reserve(timesteps + 1);
    PCNetworkState s = init_feedforward_sweep(net, image);
    auto record = [&] {
        TimestepOutput o;
        o.t = s.t;
        o.logits = state_logits(net, s);
        o.eps = s.eps;
        o.reconstruction = s.d[0].reshaped(net.spec().backbone.input_size);
        if (keep_representations) o.representations.assign(s.e.begin() + 1, s.e.end());
        out.push_back(std::move(o));
    };
    record();
    for (std::size_t t = 0; t < timesteps; ++t) {
        step(net, s);
        record();
    }
    return out;
}

}  // namespace pcnet
