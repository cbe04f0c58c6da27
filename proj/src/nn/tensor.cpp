#include "ditmos/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace ditmos::nn {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill)
{
    for (auto d : shape_) {
        if (d == 0) throw std::invalid_argument("tensor shape " + shape_string(shape_) + " has a zero extent");
    }
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size()) {
        throw std::invalid_argument("tensor shape " + shape_string(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " elements");
    }
}

void Tensor::fill(Scalar value)
{
    std::fill(data_.begin(), data_.end(), value);
}

void Tensor::reshape(Shape shape)
{
    if (shape_size(shape) != data_.size()) {
        throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

Tensor concat_channels(const Tensor& first, const Tensor& second)
{
    if (first.rank() != 2 || second.rank() != 2 || first.dim(1) != second.dim(1)) {
        throw std::invalid_argument("concat_channels: incompatible shapes " + shape_string(first.shape()) + " and " +
                                    shape_string(second.shape()));
    }
    std::vector<Scalar> data;
    data.reserve(first.size() + second.size());
    data.insert(data.end(), first.data().begin(), first.data().end());
    data.insert(data.end(), second.data().begin(), second.data().end());
    return Tensor({first.dim(0) + second.dim(0), first.dim(1)}, std::move(data));
}

std::size_t argmax(std::span<const Scalar> values)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

}  // namespace ditmos::nn
