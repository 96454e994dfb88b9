#include "pcnet/tuning.hpp"

#include <fmt/format.h>

#include "pcnet/hyperparams.hpp"
#include "pcnet/training.hpp"

namespace pcnet {

namespace {
constexpr std::size_t kTuneSteps = 4;
}

std::vector<HyperParams> SearchSpace::feasible() const {
    std::vector<HyperParams> out;
    for (double b : betas)
        for (double l : lambdas)
            for (double a : alphas) {
                HyperParams hp{b, l, a};
                if (!check_hyperparams(hp)) out.push_back(hp);
            }
    return out;
}

double tuning_objective(const PCNetwork& net, const Dataset& data, std::size_t workers) {
    const auto r = evaluate(net, data, kTuneSteps, workers);
    double total = 0.0;
    for (std::size_t t = 1; t <= kTuneSteps; ++t) total += r.mean_ce[t];
    return total / static_cast<double>(kTuneSteps);
}

TuneResult tune_hyperparams(const PCNetwork& net, const Dataset& tuning_set, const NoiseSpec& noise,
                            const SearchSpace& space, TuneMode mode, std::size_t workers) {
    const auto grid = space.feasible();
    if (grid.empty()) throw ValidationError("hyperparameter search space has no feasible point (beta + lambda <= 1)");
    const Dataset noisy = apply_noise(tuning_set, noise);
    TuneResult res;

    // Strictly better objective, or equal objective with a larger beta.
    auto better = [](double obj, const HyperParams& hp, double best_obj, const HyperParams& best_hp) {
        return obj < best_obj || (obj == best_obj && hp.beta > best_hp.beta);
    };

    if (mode == TuneMode::whole_network) {
        std::optional<double> best;
        HyperParams best_hp;
        for (const auto& hp : grid) {
            const double obj = tuning_objective(net.with_hyperparams(std::vector<HyperParams>(net.size(), hp)), noisy, workers);
            res.log.push_back({std::nullopt, hp, obj});
            if (!best || better(obj, hp, *best, best_hp)) {
                best = obj;
                best_hp = hp;
            }
        }
        res.hps.assign(net.size(), best_hp);
        res.objective = *best;
        return res;
    }

    for (const auto& pc : net.pcoders()) res.hps.push_back(pc.hp);
    res.objective = tuning_objective(net, noisy, workers);
    for (std::size_t i = 0; i < net.size(); ++i) {
        HyperParams best_hp = res.hps[i];
        double best = res.objective;
        for (const auto& hp : grid) {
            if (hp == res.hps[i]) continue;
            auto hps = res.hps;
            hps[i] = hp;
            const double obj = tuning_objective(net.with_hyperparams(hps), noisy, workers);
            res.log.push_back({i, hp, obj});
            if (better(obj, hp, best, best_hp)) {
                best = obj;
                best_hp = hp;
            }
        }
        res.hps[i] = best_hp;
        res.objective = best;
    }
    return res;
}

std::string tune_log_csv(const TuneResult& result) {
    std::string out = "pcoder,beta,lambda,alpha,objective\n";
    for (const auto& r : result.log)
        out += fmt::format("{},{},{},{},{}\n", r.pcoder ? fmt::format("{}", *r.pcoder + 1) : std::string("all"), r.hp.beta,
                           r.hp.lambda, r.hp.alpha, r.objective);
    return out;
}

}  // namespace pcnet
