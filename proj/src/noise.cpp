#include "pcnet/noise.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pcnet/hyperparams.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

std::string to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::shot: return "shot";
        case NoiseKind::impulse: return "impulse";
        case NoiseKind::speckle: return "speckle";
    }
    return "?";
}

std::optional<NoiseKind> parse_noise_kind(const std::string& name) {
    for (auto k : {NoiseKind::gaussian, NoiseKind::shot, NoiseKind::impulse, NoiseKind::speckle})
        if (to_string(k) == name) return k;
    return std::nullopt;
}

void NoiseSpec::validate() const {
    if (!(severity > 0.0) || !std::isfinite(severity))
        throw ValidationError(fmt::format("{} noise severity must be positive, got {}", to_string(kind), severity));
    if (kind == NoiseKind::impulse && severity > 1.0)
        throw ValidationError(fmt::format("impulse probability must be <= 1, got {}", severity));
}

Tensor apply_noise(const Tensor& image, const NoiseSpec& spec, std::uint64_t index) {
    spec.validate();
    Rng rng = Rng::stream(spec.seed, index);
    Tensor out = image;
    const double s = spec.severity;
    for (float& v : out.values()) {
        const double x = v;
        double y = x;
        switch (spec.kind) {
            case NoiseKind::gaussian: y = x + s * rng.normal(); break;
            case NoiseKind::speckle: y = x * (1.0 + s * rng.normal()); break;
            case NoiseKind::shot: y = static_cast<double>(rng.poisson(std::max(0.0, x) * s)) / s; break;
            case NoiseKind::impulse: {
                const double u = rng.uniform();
                if (u < 0.5 * s) y = 0.0;
                else if (u < s) y = 1.0;
                break;
            }
        }
        v = static_cast<float>(std::clamp(y, 0.0, 1.0));
    }
    return out;
}

Dataset apply_noise(const Dataset& data, const NoiseSpec& spec) {
    spec.validate();
    Dataset out = data;
    const std::size_t n = shape_numel(data.image_shape());
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tensor noisy = apply_noise(data.image(i), spec, i);
        std::copy(noisy.data(), noisy.data() + n, out.images.data() + i * n);
    }
    return out;
}

std::vector<double> default_severities(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::gaussian: return {0.2, 0.35, 0.5};
        case NoiseKind::shot: return {25.0, 12.0, 5.0};
        case NoiseKind::impulse: return {0.06, 0.12, 0.2};
        case NoiseKind::speckle: return {0.2, 0.4, 0.6};
    }
    return {};
}

}  // namespace pcnet
