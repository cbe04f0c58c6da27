#pragma once

#include <cstddef>
#include <span>

#include "ditmos/nn/tensor.hpp"

namespace ditmos::nn {

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // d loss / d logits
};

/// Numerically stable softmax (max-subtracted).
Tensor softmax(std::span<const Scalar> logits);

/// sign * -log softmax(logits)[target]; gradient sign * (softmax - onehot).
/// sign = -1 gives the repulsive (negative) cross-entropy.
LossResult cross_entropy(std::span<const Scalar> logits, std::size_t target, int sign = 1);

/// Mean over outputs of sigmoid binary cross-entropy against 0/1 targets.
LossResult binary_cross_entropy(std::span<const Scalar> logits, std::span<const Scalar> targets);

}  // namespace ditmos::nn
