#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcnet/ops.hpp"
#include "pcnet/rng.hpp"

namespace pcnet {

enum class LayerKind { conv, deconv, relu, maxpool2, upsample, flatten, dense };

std::string to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(const std::string& name);

/// Declarative description of one layer. Only the fields relevant to `kind`
/// are meaningful.
struct LayerDesc {
    LayerKind kind = LayerKind::relu;
    std::size_t out_channels = 0;  // conv, deconv
    std::size_t kernel = 0;        // conv, deconv (square)
    std::size_t stride = 1;        // conv, deconv
    std::size_t padding = 0;       // conv, deconv
    std::size_t factor = 1;        // upsample
    std::size_t out_features = 0;  // dense
    std::string label;

    bool has_params() const {
        return kind == LayerKind::conv || kind == LayerKind::deconv || kind == LayerKind::dense;
    }

    friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

/// Per-sample output shape of `desc` applied to a per-sample input shape
/// ((C, H, W) for images, (F) after flatten). Throws ShapeError when the layer
/// cannot be applied.
Shape layer_output_shape(const LayerDesc& desc, const Shape& in);
Shape kernel_shape(const LayerDesc& desc, const Shape& in);

struct Layer {
    LayerDesc desc;
    LayerWeights params;  // empty kernel for parameter-free layers
};

/// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) for kernel and bias.
LayerWeights init_layer_weights(const LayerDesc& desc, const Shape& in, Rng& rng);

/// Intermediate values kept by a forward pass for the backward pass.
struct SequenceTrace {
    std::vector<Tensor> inputs;  // input of each layer
    std::vector<std::vector<std::uint32_t>> pool_indices;
};

struct ParamGrad {
    Tensor kernel;
    Tensor bias;
};

/// Runs the layers in order on a batched tensor (leading N dimension).
Tensor forward(std::span<const Layer> layers, const Tensor& x, SequenceTrace* trace = nullptr);

/// Backpropagates grad_out through the traced forward pass and returns the
/// input gradient. When `grads` is given it receives one entry per layer
/// (empty tensors for parameter-free layers).
Tensor backward(std::span<const Layer> layers, const SequenceTrace& trace, const Tensor& grad_out,
                std::vector<ParamGrad>* grads = nullptr);

Shape with_batch(const Shape& sample_shape, std::size_t n = 1);

}  // namespace pcnet
