#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcnet/data_io.hpp"
#include "pcnet/tensor.hpp"

namespace pcnet {

enum class NoiseKind { gaussian, shot, impulse, speckle };

std::string to_string(NoiseKind kind);
std::optional<NoiseKind> parse_noise_kind(const std::string& name);

/// severity: sigma for gaussian/speckle, event scale for shot, flip
/// probability for impulse.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double severity = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Corrupts one image (any shape, values in [0, 1]) with the stream
/// Rng::stream(spec.seed, index). Results are clipped to [0, 1].
Tensor apply_noise(const Tensor& image, const NoiseSpec& spec, std::uint64_t index = 0);

/// Image i of the result uses stream index i.
Dataset apply_noise(const Dataset& data, const NoiseSpec& spec);

/// Three-step severity ladder per kind, mildest first.
std::vector<double> default_severities(NoiseKind kind);

}  // namespace pcnet
