#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcnet/data_io.hpp"
#include "pcnet/network.hpp"
#include "pcnet/noise.hpp"

namespace pcnet {

/// Sum of model error rates over severities divided by the baseline's sum.
/// nullopt when the baseline never errs (CE undefined).
std::optional<double> corruption_error(std::span<const double> model_errors, std::span<const double> baseline_errors);

/// Unweighted mean of the defined CE values; `excluded` receives the number
/// of undefined entries. nullopt when none is defined.
std::optional<double> mean_corruption_error(std::span<const std::optional<double>> ces, std::size_t* excluded = nullptr);

/// error[t][s]: error rate at timestep t for severity s of one noise kind.
struct CorruptionCurve {
    NoiseKind kind;
    std::vector<double> severities;
    std::vector<std::vector<double>> error;
    std::vector<std::optional<double>> ce;  // per timestep, baseline = timestep 0
};

struct NoiseBenchmark {
    std::vector<CorruptionCurve> kinds;
    std::vector<std::optional<double>> mce;  // per timestep
    std::vector<std::size_t> excluded;       // undefined CEs per timestep
};

NoiseBenchmark benchmark_noise(const PCNetwork& net, const Dataset& data, std::span<const NoiseKind> kinds,
                               std::span<const std::vector<double>> severities, std::uint64_t seed,
                               std::size_t timesteps, std::size_t workers = 0);

struct Curve {
    std::vector<double> raw;
    std::vector<double> normalized;  // raw / raw[0]
};

/// Mean mse(d_0(t), clean image) over the dataset, with the noisy image as
/// input. Without a noise spec the clean image is the input.
Curve reconstruction_mse_curve(const PCNetwork& net, const Dataset& clean, const std::optional<NoiseSpec>& noise,
                               std::size_t timesteps, std::size_t workers = 0);

/// 1 - Pearson correlation of the flattened tensors. A zero-variance operand
/// gives 0 when both are identical constants and 1 otherwise; `degenerate`
/// is set in that case.
double pearson_distance(const Tensor& a, const Tensor& b, bool* degenerate = nullptr);

struct DistanceCurves {
    std::vector<Curve> layers;  // one per encoder output e_1..e_N
    std::size_t degenerate = 0;
};

/// Per layer and timestep, the mean over images of the Pearson distance
/// between the clean-run and noisy-run representations, both run for T steps.
DistanceCurves representation_distance_curve(const PCNetwork& net, const Dataset& clean, const NoiseSpec& noise,
                                             std::size_t timesteps, std::size_t workers = 0);

struct MetricsRecord {
    std::string run_id;
    std::string metric;
    std::string noise_kind;           // empty when not applicable
    std::optional<double> severity;
    std::optional<std::size_t> layer;
    std::size_t timestep = 0;
    double value = 0.0;
};

/// Columns: run_id, metric, noise_kind, severity, layer, timestep, value.
std::string metrics_csv(std::span<const MetricsRecord> records);
/// JSON array of the same records.
std::string metrics_json(std::span<const MetricsRecord> records);

}  // namespace pcnet
