#include "pcnet/attack.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pcnet/dynamics.hpp"
#include "pcnet/hyperparams.hpp"
#include "pcnet/parallel.hpp"

namespace pcnet {

Tensor craft_transfer_example(const PCNetwork& net, const Tensor& image, std::size_t label, double epsilon,
                              std::optional<std::size_t> target, std::size_t steps) {
    if (!(epsilon >= 0.0)) throw ValidationError(fmt::format("attack epsilon must be >= 0, got {}", epsilon));
    if (steps < 1) throw ValidationError("attack needs at least one step");
    const std::size_t cls = target.value_or(label);
    if (cls >= net.class_count()) throw ValidationError(fmt::format("attack class {} out of range", cls));
    const Tensor x0 = as_batch(image);
    Tensor x = x0;
    if (epsilon == 0.0) return x.reshaped(image.shape());
    const float step = static_cast<float>(epsilon / static_cast<double>(steps));
    const float eps = static_cast<float>(epsilon);
    const float direction = target ? -1.0f : 1.0f;
    const auto& layers = net.backbone_layers();
    for (std::size_t s = 0; s < steps; ++s) {
        SequenceTrace trace;
        Tensor logits = forward(layers, x, &trace);
        const auto lg = softmax_cross_entropy(logits.reshaped({logits.numel()}), cls);
        const Tensor g = backward(layers, trace, lg.grad.reshaped(logits.shape()));
        for (std::size_t k = 0; k < x.numel(); ++k) {
            const float sign = g[k] > 0.0f ? 1.0f : (g[k] < 0.0f ? -1.0f : 0.0f);
            const float v = x[k] + direction * step * sign;
            x[k] = std::clamp(std::clamp(v, x0[k] - eps, x0[k] + eps), 0.0f, 1.0f);
        }
    }
    return x.reshaped(image.shape());
}

std::vector<std::size_t> qualifying_subset(const PCNetwork& net, const Dataset& data, std::size_t timesteps,
                                           std::optional<std::size_t> target, std::size_t workers) {
    std::vector<char> ok(data.size(), 0);
    parallel_for(data.size(), [&](std::size_t i) {
        if (target && data.labels[i] == *target) return;
        bool all = true;
        for (const auto& o : run_dynamics(net, data.image(i), timesteps)) all = all && argmax(o.logits) == data.labels[i];
        ok[i] = all;
    }, workers);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (ok[i]) out.push_back(i);
    return out;
}

AttackResult transfer_attack_eval(const PCNetwork& net, const Dataset& data, std::span<const std::size_t> subset,
                                  double epsilon, std::optional<std::size_t> target, std::size_t steps,
                                  std::size_t timesteps, std::size_t workers) {
    if (subset.empty()) throw EmptySubsetError("no image is correctly classified at every timestep; attack aborted");
    std::vector<std::vector<char>> hit(subset.size());
    std::vector<double> linf(subset.size(), 0.0);
    parallel_for(subset.size(), [&](std::size_t k) {
        const std::size_t i = subset[k];
        const Tensor x = data.image(i);
        const Tensor adv = craft_transfer_example(net, x, data.labels[i], epsilon, target, steps);
        linf[k] = max_abs(adv - x);
        for (const auto& o : run_dynamics(net, adv, timesteps)) {
            const std::size_t pred = argmax(o.logits);
            hit[k].push_back(target ? pred == *target : pred != data.labels[i]);
        }
    }, workers);
    AttackResult r;
    r.epsilon = epsilon;
    r.qualifying = subset.size();
    for (double l : linf) r.max_linf = std::max(r.max_linf, l);
    for (std::size_t t = 0; t <= timesteps; ++t) {
        double n = 0.0;
        for (const auto& h : hit) n += h[t] ? 1.0 : 0.0;
        r.success.push_back(n / static_cast<double>(subset.size()));
    }
    return r;
}

}  // namespace pcnet
