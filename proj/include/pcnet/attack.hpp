#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "pcnet/data_io.hpp"
#include "pcnet/network.hpp"

namespace pcnet {

/// No image qualifies for the attack evaluation.
class EmptySubsetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative sign-gradient perturbation against the plain feedforward pass:
/// `steps` steps of size epsilon/steps, each followed by projection onto the
/// L-inf ball of radius epsilon around `image` and onto [0, 1]. Untargeted
/// attacks ascend the loss of `label`; targeted ones descend the loss of
/// `target`.
Tensor craft_transfer_example(const PCNetwork& net, const Tensor& image, std::size_t label, double epsilon,
                              std::optional<std::size_t> target, std::size_t steps);

struct AttackResult {
    double epsilon = 0.0;
    std::vector<double> success;  // per timestep 0..T
    std::size_t qualifying = 0;
    double max_linf = 0.0;        // largest perturbation actually applied
};

/// Indices of images classified correctly at every timestep 0..T (and, for a
/// targeted attack, whose label differs from the target).
std::vector<std::size_t> qualifying_subset(const PCNetwork& net, const Dataset& data, std::size_t timesteps,
                                           std::optional<std::size_t> target, std::size_t workers = 0);

/// Success per timestep: prediction equals the target (targeted) or differs
/// from the label (untargeted), over the qualifying images.
AttackResult transfer_attack_eval(const PCNetwork& net, const Dataset& data, std::span<const std::size_t> subset,
                                  double epsilon, std::optional<std::size_t> target, std::size_t steps,
                                  std::size_t timesteps, std::size_t workers = 0);

}  // namespace pcnet
