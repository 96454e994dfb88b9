#include "pcnet/rng.hpp"

#include <cmath>
#include <numbers>

namespace pcnet {

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return v % n;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    std::uint64_t total = 0;
    double remaining = mean;
    while (remaining > 0.0) {
        const double chunk = remaining > 30.0 ? 30.0 : remaining;
        remaining -= chunk;
        const double limit = std::exp(-chunk);
        double p = uniform();
        std::uint64_t k = 0;
        while (p > limit) {
            ++k;
            p *= uniform();
        }
        total += k;
    }
    return total;
}

}  // namespace pcnet
