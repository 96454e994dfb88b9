#pragma once

#include <stdexcept>
#include <vector>

#include "pcnet/network.hpp"

namespace pcnet {

/// Thrown when dynamics are driven from a state that was never initialized.
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Per-sample dynamic state. All tensors carry a leading batch dimension of 1.
///
/// e[0] is the input image (constant over timesteps) and e[n] the output of
/// encoder n. d[n] is the prediction of e[n] produced by decoder n+1, with
/// residual[n] = e[n] - d[n] and eps[n] = mse over residual[n], both frozen at
/// the moment d[n] was computed. decoder_cache[n] holds the decoder's forward
/// trace from that same moment.
struct PCNetworkState {
    std::vector<Tensor> e;
    std::vector<Tensor> d;
    std::vector<double> eps;
    std::vector<Tensor> residual;
    std::vector<SequenceTrace> decoder_cache;
    std::size_t t = 0;

    bool initialized() const { return !e.empty(); }
};

/// Feedforward pass through all encoders, then one decoding step per PCoder.
PCNetworkState init_feedforward_sweep(const PCNetwork& net, const Tensor& image);

/// Gradient of eps_{n-1} with respect to e_n (n in 1..N), evaluated on the
/// stored residual snapshot:  -(2/K) * DecoderBackwardInput(residual[n-1]),
/// multiplied by sqrt(K^2 / C) when gradient scaling is on.
Tensor error_gradient(const PCNetwork& net, const PCNetworkState& state, std::size_t n);
Tensor error_gradient(const PCNetwork& net, const PCNetworkState& state, std::size_t n, bool gradient_scaling);

/// beta*ff + lambda*fb + (1 - beta - lambda)*e_prev - alpha*grad.
/// `fb` may be null (top PCoder); the memory weight stays 1 - beta - lambda.
Tensor pcoder_update(const Tensor& e_prev, const Tensor& ff, const Tensor* fb, const Tensor& grad, const HyperParams& hp);

/// One bottom-up timestep over all PCoders.
void step(const PCNetwork& net, PCNetworkState& state);

/// Classification logits (rank 1) read from the top representation.
Tensor state_logits(const PCNetwork& net, const PCNetworkState& state);

struct TimestepOutput {
    std::size_t t = 0;
    Tensor logits;               // (classes)
    std::vector<double> eps;     // eps_0 .. eps_{N-1}
    Tensor reconstruction;       // d_0, shaped like the input image
    std::vector<Tensor> representations;  // e_1 .. e_N when requested
};

/// Sweep plus T timesteps; returns T + 1 entries, entry 0 being the feedforward result.
std::vector<TimestepOutput> run_dynamics(const PCNetwork& net, const Tensor& image, std::size_t timesteps,
                                         bool keep_representations = false);

}  // namespace pcnet
