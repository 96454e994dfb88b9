#include "pcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pcnet {

namespace {

void require_rank4(const Tensor& t, const char* op) {
    if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected (N, C, H, W), got " + shape_str(t.shape()));
}

// Range of output positions o with 0 <= o*stride - pad + k < in.
struct Span {
    std::size_t lo, hi;  // [lo, hi)
};

Span valid_outputs(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad) {
    // o*stride >= pad - k  and  o*stride <= in - 1 + pad - k
    long lo_num = static_cast<long>(pad) - static_cast<long>(k);
    long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    long hi_num = static_cast<long>(in) - 1 + static_cast<long>(pad) - static_cast<long>(k);
    long hi = hi_num < 0 ? -1 : hi_num / static_cast<long>(stride);
    hi = std::min<long>(hi, static_cast<long>(out) - 1);
    if (hi < lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
    if (!bias.empty() && bias.numel() != channels)
        throw ShapeError(std::string(op) + ": bias has " + std::to_string(bias.numel()) + " entries, expected " +
                         std::to_string(channels));
}

// Accumulates the transposed-convolution scatter of `src` (channels k0) into
// `dst` (channels k1). Shared by deconv2d forward and conv2d input-gradient.
void scatter_transpose(const Tensor& src, const Tensor& kernel, std::size_t stride, std::size_t pad, Tensor& dst) {
    const std::size_t n_batch = src.dim(0), k0 = kernel.dim(0), k1 = kernel.dim(1);
    const std::size_t kh_n = kernel.dim(2), kw_n = kernel.dim(3);
    const std::size_t sh = src.dim(2), sw = src.dim(3), dh = dst.dim(2), dw = dst.dim(3);
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t a = 0; a < k0; ++a)
            for (std::size_t b = 0; b < k1; ++b) {
                const float* kp = kernel.data() + (a * k1 + b) * kh_n * kw_n;
                const float* sp = src.data() + (n * k0 + a) * sh * sw;
                float* dp = dst.data() + (n * k1 + b) * dh * dw;
                for (std::size_t kh = 0; kh < kh_n; ++kh) {
                    Span rows = valid_outputs(dh, sh, kh, stride, pad);
                    for (std::size_t kw = 0; kw < kw_n; ++kw) {
                        const float wv = kp[kh * kw_n + kw];
                        Span cols = valid_outputs(dw, sw, kw, stride, pad);
                        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
                            float* drow = dp + (y * stride + kh - pad) * dw;
                            const float* srow = sp + y * sw;
                            for (std::size_t x = cols.lo; x < cols.hi; ++x) drow[x * stride + kw - pad] += wv * srow[x];
                        }
                    }
                }
            }
}

// Cross-correlation gather of `src` (channels k1) into `dst` (channels k0).
void gather_correlate(const Tensor& src, const Tensor& kernel, std::size_t stride, std::size_t pad, Tensor& dst) {
    const std::size_t n_batch = src.dim(0), k0 = kernel.dim(0), k1 = kernel.dim(1);
    const std::size_t kh_n = kernel.dim(2), kw_n = kernel.dim(3);
    const std::size_t sh = src.dim(2), sw = src.dim(3), dh = dst.dim(2), dw = dst.dim(3);
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t a = 0; a < k0; ++a) {
            float* dp = dst.data() + (n * k0 + a) * dh * dw;
            for (std::size_t b = 0; b < k1; ++b) {
                const float* kp = kernel.data() + (a * k1 + b) * kh_n * kw_n;
                const float* sp = src.data() + (n * k1 + b) * sh * sw;
                for (std::size_t kh = 0; kh < kh_n; ++kh) {
                    Span rows = valid_outputs(sh, dh, kh, stride, pad);
                    for (std::size_t kw = 0; kw < kw_n; ++kw) {
                        const float wv = kp[kh * kw_n + kw];
                        Span cols = valid_outputs(sw, dw, kw, stride, pad);
                        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
                            float* drow = dp + y * dw;
                            const float* srow = sp + (y * stride + kh - pad) * sw;
                            for (std::size_t x = cols.lo; x < cols.hi; ++x) drow[x] += wv * srow[x * stride + kw - pad];
                        }
                    }
                }
            }
        }
}

// d/dK of <correlate(big, K), small>, with `big` holding k1 channels and
// `small` k0 channels; result has the kernel's shape.
Tensor kernel_gradient(const Tensor& big, const Tensor& small, const Shape& kshape, std::size_t stride, std::size_t pad) {
    Tensor g(kshape);
    const std::size_t n_batch = big.dim(0), k0 = kshape[0], k1 = kshape[1], kh_n = kshape[2], kw_n = kshape[3];
    const std::size_t bh = big.dim(2), bw = big.dim(3), sh = small.dim(2), sw = small.dim(3);
    for (std::size_t n = 0; n < n_batch; ++n)
        for (std::size_t a = 0; a < k0; ++a)
            for (std::size_t b = 0; b < k1; ++b) {
                float* gp = g.data() + (a * k1 + b) * kh_n * kw_n;
                const float* sp = small.data() + (n * k0 + a) * sh * sw;
                const float* bp = big.data() + (n * k1 + b) * bh * bw;
                for (std::size_t kh = 0; kh < kh_n; ++kh) {
                    Span rows = valid_outputs(bh, sh, kh, stride, pad);
                    for (std::size_t kw = 0; kw < kw_n; ++kw) {
                        Span cols = valid_outputs(bw, sw, kw, stride, pad);
                        float acc = 0.0f;
                        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
                            const float* srow = sp + y * sw;
                            const float* brow = bp + (y * stride + kh - pad) * bw;
                            for (std::size_t x = cols.lo; x < cols.hi; ++x) acc += srow[x] * brow[x * stride + kw - pad];
                        }
                        gp[kh * kw_n + kw] += acc;
                    }
                }
            }
    return g;
}

Tensor channel_sums(const Tensor& t) {
    Tensor g({t.dim(1)});
    const std::size_t plane = t.dim(2) * t.dim(3);
    for (std::size_t n = 0; n < t.dim(0); ++n)
        for (std::size_t c = 0; c < t.dim(1); ++c) {
            const float* p = t.data() + (n * t.dim(1) + c) * plane;
            float acc = 0.0f;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            g[c] += acc;
        }
    return g;
}

void add_channel_bias(Tensor& out, const Tensor& bias) {
    if (bias.empty()) return;
    const std::size_t plane = out.dim(2) * out.dim(3);
    for (std::size_t n = 0; n < out.dim(0); ++n)
        for (std::size_t c = 0; c < out.dim(1); ++c) {
            float* p = out.data() + (n * out.dim(1) + c) * plane;
            std::fill(p, p + plane, bias[c]);
        }
}

}  // namespace

void LayerWeights::validate() const {
    if (kernel.rank() != 4) throw ShapeError("kernel must be (k0, k1, kH, kW), got " + shape_str(kernel.shape()));
    if (stride < 1) throw ShapeError("stride must be >= 1");
    if (padding >= kernel.dim(2) || padding >= kernel.dim(3))
        throw ShapeError("padding " + std::to_string(padding) + " must be smaller than kernel extent " +
                         shape_str(kernel.shape()));
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const std::size_t padded = in + 2 * padding;
    if (padded < kernel)
        throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " + std::to_string(padded));
    if ((padded - kernel) % stride != 0)
        throw ShapeError("conv2d: output extent (" + std::to_string(in) + " + 2*" + std::to_string(padding) + " - " +
                         std::to_string(kernel) + ")/" + std::to_string(stride) + " + 1 is not an integer");
    return (padded - kernel) / stride + 1;
}

std::size_t deconv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
    const long out = (static_cast<long>(in) - 1) * static_cast<long>(stride) - 2 * static_cast<long>(padding) +
                     static_cast<long>(kernel);
    if (out < 1) throw ShapeError("deconv2d: non-positive output extent " + std::to_string(out));
    return static_cast<std::size_t>(out);
}

Tensor conv2d(const Tensor& input, const LayerWeights& w) {
    require_rank4(input, "conv2d");
    w.validate();
    if (input.dim(1) != w.kernel.dim(1))
        throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, kernel " +
                         shape_str(w.kernel.shape()) + " expects " + std::to_string(w.kernel.dim(1)));
    check_bias(w.bias, w.kernel.dim(0), "conv2d");
    const std::size_t ho = conv_out_extent(input.dim(2), w.kernel.dim(2), w.stride, w.padding);
    const std::size_t wo = conv_out_extent(input.dim(3), w.kernel.dim(3), w.stride, w.padding);
    Tensor out({input.dim(0), w.kernel.dim(0), ho, wo});
    add_channel_bias(out, w.bias);
    gather_correlate(input, w.kernel, w.stride, w.padding, out);
    return out;
}

Tensor conv2d_backward_input(const Shape& in_shape, const LayerWeights& w, const Tensor& grad_out) {
    Tensor gi(in_shape);
    scatter_transpose(grad_out, w.kernel, w.stride, w.padding, gi);
    return gi;
}

ConvGrads conv2d_backward(const Tensor& input, const LayerWeights& w, const Tensor& grad_out) {
    require_rank4(input, "conv2d_backward");
    require_rank4(grad_out, "conv2d_backward");
    const Shape expected{input.dim(0), w.kernel.dim(0), conv_out_extent(input.dim(2), w.kernel.dim(2), w.stride, w.padding),
                         conv_out_extent(input.dim(3), w.kernel.dim(3), w.stride, w.padding)};
    if (input.dim(1) != w.kernel.dim(1) || grad_out.shape() != expected)
        throw ShapeError("conv2d_backward: grad_out " + shape_str(grad_out.shape()) + " expected " + shape_str(expected));
    ConvGrads g;
    g.input = conv2d_backward_input(input.shape(), w, grad_out);
    g.kernel = kernel_gradient(input, grad_out, w.kernel.shape(), w.stride, w.padding);
    g.bias = channel_sums(grad_out);
    return g;
}

Tensor deconv2d(const Tensor& input, const LayerWeights& w) {
    require_rank4(input, "deconv2d");
    w.validate();
    if (input.dim(1) != w.kernel.dim(0))
        throw ShapeError("deconv2d: input has " + std::to_string(input.dim(1)) + " channels, kernel " +
                         shape_str(w.kernel.shape()) + " expects " + std::to_string(w.kernel.dim(0)));
    check_bias(w.bias, w.kernel.dim(1), "deconv2d");
    const std::size_t ho = deconv_out_extent(input.dim(2), w.kernel.dim(2), w.stride, w.padding);
    const std::size_t wo = deconv_out_extent(input.dim(3), w.kernel.dim(3), w.stride, w.padding);
    Tensor out({input.dim(0), w.kernel.dim(1), ho, wo});
    add_channel_bias(out, w.bias);
    scatter_transpose(input, w.kernel, w.stride, w.padding, out);
    return out;
}

Tensor deconv2d_backward_input(const LayerWeights& w, const Tensor& grad_out) {
    require_rank4(grad_out, "deconv2d_backward");
    if (grad_out.dim(1) != w.kernel.dim(1)) throw ShapeError("deconv2d_backward: grad_out channel mismatch");
    const std::size_t hi = conv_out_extent(grad_out.dim(2), w.kernel.dim(2), w.stride, w.padding);
    const std::size_t wi = conv_out_extent(grad_out.dim(3), w.kernel.dim(3), w.stride, w.padding);
    Tensor gi({grad_out.dim(0), w.kernel.dim(0), hi, wi});
    gather_correlate(grad_out, w.kernel, w.stride, w.padding, gi);
    return gi;
}

ConvGrads deconv2d_backward(const Tensor& input, const LayerWeights& w, const Tensor& grad_out) {
    require_rank4(input, "deconv2d_backward");
    const Shape expected{input.dim(0), w.kernel.dim(1), deconv_out_extent(input.dim(2), w.kernel.dim(2), w.stride, w.padding),
                         deconv_out_extent(input.dim(3), w.kernel.dim(3), w.stride, w.padding)};
    if (input.dim(1) != w.kernel.dim(0) || grad_out.shape() != expected)
        throw ShapeError("deconv2d_backward: grad_out " + shape_str(grad_out.shape()) + " expected " + shape_str(expected));
    ConvGrads g;
    g.input = deconv2d_backward_input(w, grad_out);
    g.kernel = kernel_gradient(grad_out, input, w.kernel.shape(), w.stride, w.padding);
    g.bias = channel_sums(grad_out);
    return g;
}

PoolResult maxpool2(const Tensor& input) {
    require_rank4(input, "maxpool2");
    const std::size_t h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2: spatial extent must be even, got " + shape_str(input.shape()));
    PoolResult r{Tensor({input.dim(0), input.dim(1), h / 2, w / 2}), {}};
    r.indices.resize(r.output.numel());
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < input.dim(0) * input.dim(1); ++nc) {
        const std::size_t base = nc * h * w;
        for (std::size_t y = 0; y < h; y += 2)
            for (std::size_t x = 0; x < w; x += 2, ++o) {
                const std::size_t cand[4] = {base + y * w + x, base + y * w + x + 1, base + (y + 1) * w + x,
                                             base + (y + 1) * w + x + 1};
                std::size_t best = cand[0];
                for (int k = 1; k < 4; ++k)
                    if (input[cand[k]] > input[best]) best = cand[k];
                r.output[o] = input[best];
                r.indices[o] = static_cast<std::uint32_t>(best);
            }
    }
    return r;
}

Tensor maxpool2_backward(const std::vector<std::uint32_t>& indices, const Tensor& grad_out, const Shape& in_shape) {
    if (indices.size() != grad_out.numel()) throw ShapeError("maxpool2_backward: index count mismatch");
    Tensor g(in_shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= g.numel()) throw ShapeError("maxpool2_backward: index out of range");
        g[indices[i]] += grad_out[i];
    }
    return g;
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
    require_rank4(input, "upsample_nearest");
    if (factor == 0) throw ShapeError("upsample_nearest: factor must be >= 1");
    const std::size_t h = input.dim(2), w = input.dim(3);
    Tensor out({input.dim(0), input.dim(1), h * factor, w * factor});
    const std::size_t ow = w * factor;
    for (std::size_t nc = 0; nc < input.dim(0) * input.dim(1); ++nc) {
        const float* ip = input.data() + nc * h * w;
        float* op = out.data() + nc * h * w * factor * factor;
        for (std::size_t y = 0; y < h * factor; ++y)
            for (std::size_t x = 0; x < ow; ++x) op[y * ow + x] = ip[(y / factor) * w + x / factor];
    }
    return out;
}

Tensor upsample_backward(const Tensor& grad_out, std::size_t factor) {
    require_rank4(grad_out, "upsample_backward");
    if (factor == 0) throw ShapeError("upsample_backward: factor must be >= 1");
    if (grad_out.dim(2) % factor != 0 || grad_out.dim(3) % factor != 0)
        throw ShapeError("upsample_backward: extent not divisible by factor");
    const std::size_t h = grad_out.dim(2) / factor, w = grad_out.dim(3) / factor, ow = grad_out.dim(3);
    Tensor g({grad_out.dim(0), grad_out.dim(1), h, w});
    for (std::size_t nc = 0; nc < grad_out.dim(0) * grad_out.dim(1); ++nc) {
        const float* gp = grad_out.data() + nc * h * w * factor * factor;
        float* op = g.data() + nc * h * w;
        for (std::size_t y = 0; y < h * factor; ++y)
            for (std::size_t x = 0; x < ow; ++x) op[(y / factor) * w + x / factor] += gp[y * ow + x];
    }
    return g;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
    return out;
}

Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_out) {
    require_same_shape(pre_activation, grad_out, "relu_backward");
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.numel(); ++i)
        if (!(pre_activation[i] > 0.0f)) g[i] = 0.0f;
    return g;
}

namespace {

std::pair<std::size_t, std::size_t> dense_rows(const Tensor& input) {
    if (input.rank() == 1) return {1, input.numel()};
    return {input.dim(0), input.numel() / input.dim(0)};
}

}  // namespace

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) throw ShapeError("dense: weight must be (out, in), got " + shape_str(weight.shape()));
    auto [rows, cols] = dense_rows(input);
    const std::size_t out_n = weight.dim(0);
    if (cols != weight.dim(1))
        throw ShapeError("dense: flattened input length " + std::to_string(cols) + " does not match weight " +
                         shape_str(weight.shape()));
    if (!bias.empty() && bias.numel() != out_n) throw ShapeError("dense: bias length mismatch");
    Tensor out(input.rank() == 1 ? Shape{out_n} : Shape{rows, out_n});
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = input.data() + r * cols;
        for (std::size_t o = 0; o < out_n; ++o) {
            const float* wr = weight.data() + o * cols;
            float acc = bias.empty() ? 0.0f : bias[o];
            for (std::size_t i = 0; i < cols; ++i) acc += wr[i] * x[i];
            out[r * out_n + o] = acc;
        }
    }
    return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out) {
    auto [rows, cols] = dense_rows(input);
    const std::size_t out_n = weight.dim(0);
    if (cols != weight.dim(1) || grad_out.numel() != rows * out_n) throw ShapeError("dense_backward: shape mismatch");
    DenseGrads g{Tensor(input.shape()), Tensor(weight.shape()), Tensor({out_n})};
    for (std::size_t r = 0; r < rows; ++r) {
        const float* x = input.data() + r * cols;
        const float* go = grad_out.data() + r * out_n;
        float* gx = g.input.data() + r * cols;
        for (std::size_t o = 0; o < out_n; ++o) {
            const float* wr = weight.data() + o * cols;
            float* gw = g.weight.data() + o * cols;
            for (std::size_t i = 0; i < cols; ++i) {
                gx[i] += wr[i] * go[o];
                gw[i] += x[i] * go[o];
            }
            g.bias[o] += go[o];
        }
    }
    return g;
}

std::vector<double> softmax(const Tensor& logits) {
    std::vector<double> p(logits.numel());
    float m = -std::numeric_limits<float>::infinity();
    for (float v : logits.values()) m = std::max(m, v);
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::size_t target_class) {
    if (target_class >= logits.numel())
        throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(target_class) + " outside " +
                                std::to_string(logits.numel()) + " classes");
    float m = -std::numeric_limits<float>::infinity();
    for (float v : logits.values()) m = std::max(m, v);
    double z = 0.0;
    for (float v : logits.values()) z += std::exp(static_cast<double>(v) - m);
    const double log_z = std::log(z);
    LossAndGrad r;
    r.loss = log_z - (static_cast<double>(logits[target_class]) - m);
    r.grad = Tensor(logits.shape());
    for (std::size_t i = 0; i < logits.numel(); ++i)
        r.grad[i] = static_cast<float>(std::exp(static_cast<double>(logits[i]) - m - log_z));
    r.grad[target_class] -= 1.0f;
    return r;
}

std::size_t argmax(const Tensor& t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.numel(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

}  // namespace pcnet
