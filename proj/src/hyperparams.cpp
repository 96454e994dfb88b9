#include "pcnet/hyperparams.hpp"

#include <cmath>

#include <fmt/format.h>

namespace pcnet {

namespace {
// Absorbs decimal round-off such as 0.7 + 0.3 without admitting real violations.
constexpr double kSumSlack = 1e-12;
}  // namespace

std::optional<HyperParamViolation> check_hyperparams(const HyperParams& hp) {
    using C = HyperParamViolation::Constraint;
    if (!(hp.beta >= 0.0 && hp.beta <= 1.0))
        return HyperParamViolation{C::beta_range, fmt::format("feedforward coefficient beta = {} outside [0, 1]", hp.beta)};
    if (!(hp.lambda >= 0.0 && hp.lambda <= 1.0))
        return HyperParamViolation{C::lambda_range,
                                   fmt::format("feedback coefficient lambda = {} outside [0, 1]", hp.lambda)};
    if (hp.beta + hp.lambda > 1.0 + kSumSlack)
        return HyperParamViolation{C::sum_exceeds_one,
                                   fmt::format("beta + lambda = {} + {} exceeds 1", hp.beta, hp.lambda)};
    if (!(hp.alpha >= 0.0) || !std::isfinite(hp.alpha))
        return HyperParamViolation{C::alpha_negative, fmt::format("error-correction step alpha = {} must be >= 0", hp.alpha)};
    return std::nullopt;
}

void validate_hyperparams(const HyperParams& hp) {
    if (auto v = check_hyperparams(hp)) throw ValidationError(v->message);
}

std::string to_string(const HyperParams& hp) {
    return fmt::format("(beta={}, lambda={}, alpha={})", hp.beta, hp.lambda, hp.alpha);
}

}  // namespace pcnet
