#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcnet {

using Shape = std::vector<std::size_t>;

/// Thrown whenever operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float tensor of rank 1..4 (N, C, H, W order for images).
///
/// A default-constructed tensor is empty (rank 0, no data); it is used to
/// mean "absent", e.g. a layer without bias.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0f); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same data, new shape; element counts must agree.
    Tensor reshaped(Shape shape) const;

    void fill(float v);
    bool all_finite() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(float s);

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<float> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, float s);
Tensor operator*(float s, Tensor a);

/// Elementwise a*x + y (shapes must match).
Tensor axpy(float a, const Tensor& x, const Tensor& y);

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double sum_squares(const Tensor& a);
float max_abs(const Tensor& a);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace pcnet
