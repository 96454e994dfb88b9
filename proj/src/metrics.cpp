#include "pcnet/metrics.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

#include "pcnet/dynamics.hpp"
#include "pcnet/hyperparams.hpp"
#include "pcnet/parallel.hpp"
#include "pcnet/training.hpp"

namespace pcnet {

std::optional<double> corruption_error(std::span<const double> model_errors, std::span<const double> baseline_errors) {
    if (model_errors.size() != baseline_errors.size() || model_errors.empty())
        throw ValidationError(fmt::format("corruption_error needs equal, non-zero severity counts (got {} and {})",
                                          model_errors.size(), baseline_errors.size()));
    double m = 0.0, b = 0.0;
    for (std::size_t s = 0; s < model_errors.size(); ++s) {
        m += model_errors[s];
        b += baseline_errors[s];
    }
    if (!(b > 0.0)) return std::nullopt;
    return m / b;
}

std::optional<double> mean_corruption_error(std::span<const std::optional<double>> ces, std::size_t* excluded) {
    double total = 0.0;
    std::size_t n = 0, skipped = 0;
    for (const auto& c : ces) {
        if (c) {
            total += *c;
            ++n;
        } else {
            ++skipped;
        }
    }
    if (excluded) *excluded = skipped;
    if (n == 0) return std::nullopt;
    return total / static_cast<double>(n);
}

NoiseBenchmark benchmark_noise(const PCNetwork& net, const Dataset& data, std::span<const NoiseKind> kinds,
                               std::span<const std::vector<double>> severities, std::uint64_t seed,
                               std::size_t timesteps, std::size_t workers) {
    if (kinds.size() != severities.size()) throw ValidationError("one severity ladder per noise kind is required");
    NoiseBenchmark bench;
    for (std::size_t k = 0; k < kinds.size(); ++k) {
        if (severities[k].empty()) throw ValidationError("empty severity ladder for " + to_string(kinds[k]));
        CorruptionCurve c{kinds[k], severities[k], std::vector<std::vector<double>>(timesteps + 1), {}};
        for (double sev : severities[k]) {
            const auto r = evaluate(net, apply_noise(data, NoiseSpec{kinds[k], sev, seed}), timesteps, workers);
            for (std::size_t t = 0; t <= timesteps; ++t) c.error[t].push_back(1.0 - r.accuracy[t]);
        }
        for (std::size_t t = 0; t <= timesteps; ++t) c.ce.push_back(corruption_error(c.error[t], c.error[0]));
        bench.kinds.push_back(std::move(c));
    }
    for (std::size_t t = 0; t <= timesteps; ++t) {
        std::vector<std::optional<double>> ces;
        for (const auto& c : bench.kinds) ces.push_back(c.ce[t]);
        std::size_t excluded = 0;
        bench.mce.push_back(mean_corruption_error(ces, &excluded));
        bench.excluded.push_back(excluded);
    }
    return bench;
}

namespace {

std::vector<double> normalize(const std::vector<double>& raw) {
    std::vector<double> out;
    for (double v : raw) out.push_back(raw[0] > 0.0 ? v / raw[0] : (v == 0.0 ? 1.0 : std::numeric_limits<double>::infinity()));
    return out;
}

}  // namespace

Curve reconstruction_mse_curve(const PCNetwork& net, const Dataset& clean, const std::optional<NoiseSpec>& noise,
                               std::size_t timesteps, std::size_t workers) {
    std::vector<std::vector<double>> per(clean.size());
    parallel_for(clean.size(), [&](std::size_t i) {
        const Tensor x = clean.image(i);
        const Tensor input = noise ? apply_noise(x, *noise, i) : x;
        for (const auto& o : run_dynamics(net, input, timesteps)) per[i].push_back(mse(o.reconstruction, x));
    }, workers);
    Curve c;
    for (std::size_t t = 0; t <= timesteps; ++t) {
        double total = 0.0;
        for (const auto& p : per) total += p[t];
        c.raw.push_back(total / static_cast<double>(clean.size()));
    }
    c.normalized = normalize(c.raw);
    return c;
}

double pearson_distance(const Tensor& a, const Tensor& b, bool* degenerate) {
    if (a.numel() != b.numel()) throw ShapeError("pearson_distance: element counts differ");
    const double n = static_cast<double>(a.numel());
    const double ma = sum(a) / n, mb = sum(b) / n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
        const double da = a[k] - ma, db = b[k] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (degenerate) *degenerate = false;
    if (saa == 0.0 || sbb == 0.0) {
        if (degenerate) *degenerate = true;
        return (saa == 0.0 && sbb == 0.0 && a == b) ? 0.0 : 1.0;
    }
    return 1.0 - sab / std::sqrt(saa * sbb);
}

DistanceCurves representation_distance_curve(const PCNetwork& net, const Dataset& clean, const NoiseSpec& noise,
                                             std::size_t timesteps, std::size_t workers) {
    const std::size_t layers = net.size();
    // per[i][t][n]
    std::vector<std::vector<std::vector<double>>> per(clean.size());
    std::vector<std::size_t> degenerate(clean.size(), 0);
    parallel_for(clean.size(), [&](std::size_t i) {
        const Tensor x = clean.image(i);
        const auto a = run_dynamics(net, x, timesteps, true);
        const auto b = run_dynamics(net, apply_noise(x, noise, i), timesteps, true);
        for (std::size_t t = 0; t <= timesteps; ++t) {
            std::vector<double> d(layers);
            for (std::size_t n = 0; n < layers; ++n) {
                bool deg = false;
                d[n] = pearson_distance(a[t].representations[n], b[t].representations[n], &deg);
                degenerate[i] += deg ? 1 : 0;
            }
            per[i].push_back(std::move(d));
        }
    }, workers);
    DistanceCurves out;
    for (std::size_t i = 0; i < clean.size(); ++i) out.degenerate += degenerate[i];
    for (std::size_t n = 0; n < layers; ++n) {
        Curve c;
        for (std::size_t t = 0; t <= timesteps; ++t) {
            double total = 0.0;
            for (const auto& p : per) total += p[t][n];
            c.raw.push_back(total / static_cast<double>(clean.size()));
        }
        c.normalized = normalize(c.raw);
        out.layers.push_back(std::move(c));
    }
    return out;
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
    std::string out = "run_id,metric,noise_kind,severity,layer,timestep,value\n";
    for (const auto& r : records)
        out += fmt::format("{},{},{},{},{},{},{}\n", r.run_id, r.metric, r.noise_kind,
                           r.severity ? fmt::format("{}", *r.severity) : std::string(),
                           r.layer ? fmt::format("{}", *r.layer) : std::string(), r.timestep, r.value);
    return out;
}

std::string metrics_json(std::span<const MetricsRecord> records) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["run_id"] = r.run_id;
        j["metric"] = r.metric;
        j["noise_kind"] = r.noise_kind.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.noise_kind);
        j["severity"] = r.severity ? nlohmann::ordered_json(*r.severity) : nlohmann::ordered_json(nullptr);
        j["layer"] = r.layer ? nlohmann::ordered_json(*r.layer) : nlohmann::ordered_json(nullptr);
        j["timestep"] = r.timestep;
        j["value"] = std::isfinite(r.value) ? nlohmann::ordered_json(r.value) : nlohmann::ordered_json(nullptr);
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

}  // namespace pcnet
