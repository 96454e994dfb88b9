#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcnet/data_io.hpp"
#include "pcnet/network.hpp"

namespace pcnet {

struct TrainOpts {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    bool shuffle = true;
    std::size_t workers = 0;  // 0 = default_workers()

    void validate() const;
};

/// Desk-scale defaults: backbone SGD at lr 0.05 for 4 epochs; decoders at
/// lr 1e-5 for 6 epochs (the sum-of-squares loss has large gradients).
TrainOpts default_backbone_opts();
TrainOpts default_feedback_opts();

/// Loss became NaN/Inf during training.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainLogRow {
    std::size_t epoch = 0;  // 0 = before the first update
    std::string split;      // "train" or "test"
    double loss = 0.0;
    double accuracy = 0.0;  // NaN for reconstruction logs
};

struct TrainResult {
    WeightMap weights;
    std::vector<TrainLogRow> log;
};

/// SGD with momentum (v = mu*v + g; w -= lr*v) on softmax cross-entropy,
/// starting from fresh weights drawn with opts.seed. Returns backbone weights
/// only. `test` (optional) is evaluated after every epoch.
TrainResult train_backbone(const NetworkSpec& spec, const Dataset& train, const TrainOpts& opts,
                           const Dataset* test = nullptr);

/// Reconstruction loss of one image: sum over PCoders of ||e_n - d_n||^2 after
/// one feedforward sweep and one decoding step.
double feedback_loss(const PCNetwork& net, const Tensor& image);
/// Mean feedback_loss over a dataset.
double feedback_loss(const PCNetwork& net, const Dataset& data, std::size_t workers = 0);

/// Trains decoder weights only, targets detached. Returns decoder weights.
/// Rejects networks whose backbone was freshly initialized.
TrainResult train_feedback(const PCNetwork& net, const Dataset& train, const TrainOpts& opts,
                           const Dataset* test = nullptr);

struct EvalResult {
    std::vector<double> accuracy;  // t = 0..T
    std::vector<double> mean_ce;
};

EvalResult evaluate(const PCNetwork& net, const Dataset& data, std::size_t timesteps, std::size_t workers = 0);

/// Plain backbone accuracy and mean cross-entropy.
EvalResult evaluate_backbone(const PCNetwork& net, const Dataset& data, std::size_t workers = 0);

std::string train_log_csv(const std::vector<TrainLogRow>& log);

}  // namespace pcnet
