#include "pcnet/tensor.hpp"

#include <cmath>
#include <numeric>

namespace pcnet {

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

std::size_t shape_numel(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4)
        throw ShapeError("tensor rank must be 1..4, got shape " + shape_str(shape));
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_))
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    for (float v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

Tensor& Tensor::operator+=(const Tensor& o) {
    require_same_shape(*this, o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    require_same_shape(*this, o, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(float s) {
    for (float& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, float s) { return a *= s; }
Tensor operator*(float s, Tensor a) { return a *= s; }

Tensor axpy(float a, const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "axpy");
    Tensor out = y;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += a * x[i];
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double sum(const Tensor& a) {
    double s = 0.0;
    for (float v : a.values()) s += v;
    return s;
}

double sum_squares(const Tensor& a) {
    double s = 0.0;
    for (float v : a.values()) s += static_cast<double>(v) * v;
    return s;
}

float max_abs(const Tensor& a) {
    float m = 0.0f;
    for (float v : a.values()) m = std::max(m, std::fabs(v));
    return m;
}

}  // namespace pcnet
