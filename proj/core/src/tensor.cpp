#include "ffebm/tensor.hpp"

#include "ffebm/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ffebm {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), Scalar{0}) {}

Tensor::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::from(Shape shape, std::initializer_list<Scalar> values) {
    return Tensor(std::move(shape), std::vector<Scalar>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
    }
    return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
}

void Tensor::reshape(Shape shape) {
    if (shape_numel(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    shape_ = std::move(shape);
}

void Tensor::fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(context) + ": shape " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    out += b;
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    out -= b;
    return out;
}

Tensor operator*(Scalar s, const Tensor& a) {
    Tensor out = a;
    out *= s;
    return out;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto x = b.data();
    auto y = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
    return a;
}

Tensor& operator-=(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "subtract");
    auto x = b.data();
    auto y = a.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= x[i];
    return a;
}

Tensor& operator*=(Tensor& a, Scalar s) {
    for (auto& v : a.data()) v *= s;
    return a;
}

void axpy(Scalar alpha, const Tensor& x, Tensor& y) {
    require_same_shape(x, y, "axpy");
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += alpha * xs[i];
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    auto x = b.data();
    auto y = out.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= x[i];
    return out;
}

Tensor negated(const Tensor& a) { return Scalar{-1} * a; }

Scalar dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw DimensionError("dot: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    Scalar acc = 0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
    return acc;
}

Scalar sum(const Tensor& a) {
    Scalar acc = 0;
    for (Scalar v : a.data()) acc += v;
    return acc;
}

Scalar l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

Scalar max_abs(const Tensor& a) {
    Scalar m = 0;
    for (Scalar v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    Scalar m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool all_finite(const Tensor& a) {
    return std::all_of(a.data().begin(), a.data().end(), [](Scalar v) { return std::isfinite(v); });
}

}  // namespace ffebm
