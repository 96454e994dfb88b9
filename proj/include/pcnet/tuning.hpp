#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pcnet/data_io.hpp"
#include "pcnet/network.hpp"
#include "pcnet/noise.hpp"

namespace pcnet {

struct SearchSpace {
    std::vector<double> betas;
    std::vector<double> lambdas;
    std::vector<double> alphas;

    /// Grid points in beta-major order, skipping those with beta + lambda > 1.
    std::vector<HyperParams> feasible() const;
};

enum class TuneMode { whole_network, per_pcoder };

struct TuneLogRow {
    std::optional<std::size_t> pcoder;  // nullopt in whole-network mode
    HyperParams hp;
    double objective = 0.0;
};

struct TuneResult {
    std::vector<HyperParams> hps;  // one triple per PCoder
    double objective = 0.0;
    std::vector<TuneLogRow> log;
};

/// Mean cross-entropy over timesteps 1..4 and all images.
double tuning_objective(const PCNetwork& net, const Dataset& data, std::size_t workers = 0);

/// Minimizes tuning_objective on the noisy tuning set. Whole-network mode
/// applies one grid point to every PCoder. Per-pcoder mode sweeps PCoders
/// bottom-up, each time choosing the best grid point for one PCoder with the
/// others held at their current values (the incumbent stays a candidate).
/// Ties go to the larger beta, then the earlier grid point.
TuneResult tune_hyperparams(const PCNetwork& net, const Dataset& tuning_set, const NoiseSpec& noise,
                            const SearchSpace& space, TuneMode mode, std::size_t workers = 0);

std::string tune_log_csv(const TuneResult& result);

}  // namespace pcnet
