#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcnet/hyperparams.hpp"
#include "pcnet/layers.hpp"

namespace pcnet {

/// Malformed config text. `line()` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, std::size_t line)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct BackboneSpec {
    std::string name;
    Shape input_size;  // (C, H, W)
    std::vector<LayerDesc> layers;
    std::size_t head_start = 0;

    friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

struct PCoderSpec {
    /// Index of the last backbone layer of this encoder. The encoder starts
    /// right after the previous PCoder's boundary (layer 0 for the first).
    std::size_t boundary = 0;
    /// Explicit predictor layers; nullopt selects the default decoder.
    std::optional<std::vector<LayerDesc>> predictor;
    HyperParams hp;

    friend bool operator==(const PCoderSpec&, const PCoderSpec&) = default;
};

struct NetworkSpec {
    std::string name;
    BackboneSpec backbone;
    std::vector<PCoderSpec> pcoders;
    bool gradient_scaling = false;
    bool shared_hyperparameters = false;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Parses and validates a TOML network config. Per-PCoder hyperparameters
/// default to (0.3, 0.3, 0.01); absent predictors select the default decoder.
NetworkSpec parse_config(std::string_view text);
NetworkSpec load_config(const std::filesystem::path& path);

/// Emits TOML that parses back to an equal spec.
std::string serialize_config(const NetworkSpec& spec);

/// Structural checks: shape propagation, boundary ordering, flatten
/// placement, decoder shapes, hyperparameter constraints. Throws
/// ValidationError or ShapeError.
void validate_spec(const NetworkSpec& spec);

/// Upsample by (h_in / h_out) followed by a 3x3 stride-1 padding-1
/// transposed convolution to the predicted channel count. The upsample is
/// omitted for factor 1. Throws ValidationError on non-integer ratios.
std::vector<LayerDesc> default_decoder(const Shape& encoder_out, const Shape& predicted);

/// Per-sample shapes of e_0 (the input) through e_N.
std::vector<Shape> representation_shapes(const NetworkSpec& spec);

/// Decoder layers of PCoder i (0-based), resolving the default rule.
std::vector<LayerDesc> resolved_decoder(const NetworkSpec& spec, std::size_t i);

}  // namespace pcnet
