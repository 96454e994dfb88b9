#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace pcnet {

/// Coefficients of one PCoder's update: feedforward drive (beta), feedback
/// (lambda) and error-correction step (alpha). Memory weight is 1 - beta - lambda.
struct HyperParams {
    double beta = 0.3;
    double lambda = 0.3;
    double alpha = 0.01;

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// Thrown for semantically invalid configurations and parameters.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct HyperParamViolation {
    enum class Constraint { beta_range, lambda_range, sum_exceeds_one, alpha_negative };
    Constraint constraint;
    std::string message;
};

/// Accepts iff beta, lambda in [0, 1], beta + lambda <= 1 and alpha >= 0.
std::optional<HyperParamViolation> check_hyperparams(const HyperParams& hp);

/// Throws ValidationError carrying the violated constraint.
void validate_hyperparams(const HyperParams& hp);

std::string to_string(const HyperParams& hp);

}  // namespace pcnet
