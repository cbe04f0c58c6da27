#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ditmos::nn {

#ifdef DITMOS_FLOAT64
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Rank-2 tensors are laid out channels x length.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Scalar fill = Scalar{0});
    Tensor(Shape shape, std::vector<Scalar> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<Scalar> data() noexcept { return data_; }
    std::span<const Scalar> data() const noexcept { return data_; }
    Scalar* raw() noexcept { return data_.data(); }
    const Scalar* raw() const noexcept { return data_.data(); }

    Scalar& operator[](std::size_t i) noexcept { return data_[i]; }
    Scalar operator[](std::size_t i) const noexcept { return data_[i]; }

    Scalar& at(std::size_t row, std::size_t col) { return data_[row * shape_.at(1) + col]; }
    Scalar at(std::size_t row, std::size_t col) const { return data_[row * shape_.at(1) + col]; }

    void fill(Scalar value);
    /// Reinterprets the buffer under a new shape of equal element count.
    void reshape(Shape shape);
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

/// Channel-wise concatenation of two rank-2 tensors with equal length.
Tensor concat_channels(const Tensor& first, const Tensor& second);

std::size_t argmax(std::span<const Scalar> values);

}  // namespace ditmos::nn
