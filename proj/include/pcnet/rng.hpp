#pragma once

#include <cstdint>

namespace pcnet {

/// SplitMix64 generator.
///
/// state_{k+1} = state_k + 0x9E3779B97F4A7C15, output = mix64(state_{k+1}) with
///   mix64(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///             return z ^ (z >> 31)
///
/// Independent streams for (seed, index) pairs start from
///   state = mix64(mix64(seed) ^ (index * 0xD1B54A32D192ED03 + 0x632BE59BD9B4E019))
/// so per-item randomness never depends on processing order.
class Rng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static constexpr std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        return Rng(mix64(mix64(seed) ^ (index * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL)));
    }

    std::uint64_t next_u64() {
        state_ += kGamma;
        return mix64(state_);
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (unbiased).
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via the Box-Muller transform (one draw per call pair, no caching).
    double normal();

    /// Poisson(mean); exact multiplication method applied in chunks of mean <= 30.
    std::uint64_t poisson(double mean);

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace pcnet
