#pragma once

#include <cstdint>
#include <vector>

#include "pcnet/tensor.hpp"

namespace pcnet {

/// Parameters of a convolution, transposed convolution or dense layer.
///
/// Kernel layout is (k0, k1, kH, kW). For conv2d k0 is the output and k1 the
/// input channel count. deconv2d uses the same tensor as the transpose of that
/// map, so there k0 is the input and k1 the output channel count. For dense,
/// the kernel is (out, in). An empty bias means "no bias".
struct LayerWeights {
    Tensor kernel;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;

    void validate() const;
};

struct ConvGrads {
    Tensor input;
    Tensor kernel;
    Tensor bias;
};

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);
std::size_t deconv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// Cross-correlation (no kernel flip). Input is (N, C, H, W).
Tensor conv2d(const Tensor& input, const LayerWeights& w);
ConvGrads conv2d_backward(const Tensor& input, const LayerWeights& w, const Tensor& grad_out);
Tensor conv2d_backward_input(const Shape& in_shape, const LayerWeights& w, const Tensor& grad_out);

// Transposed convolution: the linear adjoint of conv2d with the same kernel, plus bias.
Tensor deconv2d(const Tensor& input, const LayerWeights& w);
ConvGrads deconv2d_backward(const Tensor& input, const LayerWeights& w, const Tensor& grad_out);
Tensor deconv2d_backward_input(const LayerWeights& w, const Tensor& grad_out);

struct PoolResult {
    Tensor output;
    std::vector<std::uint32_t> indices;  // flat argmax index into the input, per output element
};

/// 2x2 non-overlapping max pooling; ties resolve to the first row-major maximum.
PoolResult maxpool2(const Tensor& input);
Tensor maxpool2_backward(const std::vector<std::uint32_t>& indices, const Tensor& grad_out, const Shape& in_shape);

Tensor upsample_nearest(const Tensor& input, std::size_t factor);
Tensor upsample_backward(const Tensor& grad_out, std::size_t factor);

Tensor relu(const Tensor& input);
/// Passes the gradient where pre_activation > 0; the gradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_out);

/// Affine map over the flattened trailing dimensions. A rank-1 input is one sample.
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct DenseGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out);

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};

/// Max-shifted softmax followed by negative log-likelihood of target_class.
/// logits hold one sample (rank 1, or rank 2 with a leading 1).
LossAndGrad softmax_cross_entropy(const Tensor& logits, std::size_t target_class);
std::vector<double> softmax(const Tensor& logits);
std::size_t argmax(const Tensor& t);

/// Mean squared error (1/K) * sum (a_i - b_i)^2 with K the element count.
double mse(const Tensor& a, const Tensor& b);

}  // namespace pcnet
