#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ffebm {

/// Element type of every tensor in the library.
using Scalar = double;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, Scalar fill);
    Tensor(Shape shape, std::vector<Scalar> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }
    static Tensor full(Shape shape, Scalar value) { return Tensor(std::move(shape), value); }
    static Tensor from(Shape shape, std::initializer_list<Scalar> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<Scalar> data() noexcept { return data_; }
    std::span<const Scalar> data() const noexcept { return data_; }
    Scalar* raw() noexcept { return data_.data(); }
    const Scalar* raw() const noexcept { return data_.data(); }

    Scalar& operator[](std::size_t i) { return data_[i]; }
    Scalar operator[](std::size_t i) const { return data_[i]; }

    /// Copy with a new shape of equal element count.
    Tensor reshaped(Shape shape) const;
    /// In-place reshape; element count must be preserved.
    void reshape(Shape shape);

    /// Row count and per-row element count, treating axis 0 as the batch.
    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t row_size() const { return rows() == 0 ? 0 : numel() / rows(); }

    void fill(Scalar value);

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

/// Throws DimensionError with `context` when the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(Scalar s, const Tensor& a);
Tensor& operator+=(Tensor& a, const Tensor& b);
Tensor& operator-=(Tensor& a, const Tensor& b);
Tensor& operator*=(Tensor& a, Scalar s);

/// y += alpha * x
void axpy(Scalar alpha, const Tensor& x, Tensor& y);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor negated(const Tensor& a);

Scalar dot(const Tensor& a, const Tensor& b);
Scalar sum(const Tensor& a);
Scalar l2_norm(const Tensor& a);
Scalar max_abs(const Tensor& a);
Scalar max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& a);

/// Named tensors in deterministic (lexicographic) order.
using TensorMap = std::map<std::string, Tensor>;

}  // namespace ffebm
