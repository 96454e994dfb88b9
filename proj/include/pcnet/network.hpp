#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcnet/config.hpp"
#include "pcnet/layers.hpp"

namespace pcnet {

using WeightMap = std::map<std::string, Tensor>;

/// One encoder/decoder pair. Encoder i (0-based) maps e_i to e_{i+1};
/// its decoder maps e_{i+1} back to a prediction d_i of e_i.
struct PCoder {
    std::size_t first_layer = 0;  // encoder = backbone layers [first_layer, last_layer]
    std::size_t last_layer = 0;
    std::vector<Layer> decoder;
    HyperParams hp;
    Shape predicted_shape;  // e_i, per sample
    Shape output_shape;     // e_{i+1}, per sample
    std::size_t K = 0;      // element count of the predicted layer
    std::size_t C = 0;      // kH * kW * channels of the predicted layer, from the last deconv
    double gradient_scale() const;  // sqrt(K^2 / C)
};

/// Immutable predictive-coding network: backbone layers split into N
/// contiguous encoders, one decoder per encoder, and a classification head.
class PCNetwork {
public:
    const NetworkSpec& spec() const { return spec_; }
    std::size_t size() const { return pcoders_.size(); }
    const PCoder& pcoder(std::size_t i) const { return pcoders_.at(i); }
    const std::vector<PCoder>& pcoders() const { return pcoders_; }
    bool gradient_scaling() const { return spec_.gradient_scaling; }
    const std::vector<Layer>& backbone_layers() const { return backbone_; }
    std::size_t class_count() const;

    /// False when some backbone layer was freshly initialized rather than
    /// loaded, i.e. the backbone has not been trained and frozen yet.
    bool backbone_frozen() const { return backbone_frozen_; }

    std::span<const Layer> encoder_layers(std::size_t i) const;
    std::span<const Layer> head_layers() const;

    Tensor encode(std::size_t i, const Tensor& x, SequenceTrace* trace = nullptr) const;
    Tensor decode(std::size_t i, const Tensor& e, SequenceTrace* trace = nullptr) const;
    Tensor head(const Tensor& top) const;

    /// Plain feedforward pass through every backbone layer. Accepts (C, H, W)
    /// or (N, C, H, W) input and returns (N, classes).
    Tensor backbone_logits(const Tensor& image) const;

    WeightMap weights() const;
    WeightMap backbone_weights() const;
    WeightMap decoder_weights() const;

    /// Copy with the given per-PCoder hyperparameters (validated).
    PCNetwork with_hyperparams(const std::vector<HyperParams>& hps) const;
    /// Copy with entries of `w` replacing matching parameters.
    PCNetwork with_weights(const WeightMap& w) const;
    /// Copy with the gradient-scaling switch set.
    PCNetwork with_gradient_scaling(bool on) const;

private:
    friend PCNetwork build_network(const NetworkSpec&, const WeightMap&, std::optional<std::uint64_t>);

    NetworkSpec spec_;
    std::vector<Layer> backbone_;
    std::vector<PCoder> pcoders_;
    bool backbone_frozen_ = true;
};

std::string backbone_param_name(std::size_t layer, bool bias);
std::string decoder_param_name(std::size_t pcoder, std::size_t layer, bool bias);

/// Assembles the network. Every parameter is taken from `weights`; a missing
/// entry is freshly initialized when `init_seed` is given and rejected
/// otherwise. Mis-shaped entries are always rejected with their name.
PCNetwork build_network(const NetworkSpec& spec, const WeightMap& weights = {},
                        std::optional<std::uint64_t> init_seed = std::nullopt);

/// Brings a (C, H, W) or (1, C, H, W) image to batched form.
Tensor as_batch(const Tensor& image);

}  // namespace pcnet
