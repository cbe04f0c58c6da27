#include "ditmos/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ditmos::nn {

Tensor softmax(std::span<const Scalar> logits)
{
    if (logits.empty()) throw std::invalid_argument("softmax of an empty vector");
    Tensor out({logits.size()});
    const Scalar peak = *std::max_element(logits.begin(), logits.end());
    Scalar total = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (auto& v : out.data()) v /= total;
    return out;
}

LossResult cross_entropy(std::span<const Scalar> logits, std::size_t target, int sign)
{
    if (target >= logits.size()) {
        throw std::invalid_argument("cross_entropy target " + std::to_string(target) + " out of range for " +
                                    std::to_string(logits.size()) + " logits");
    }
    if (sign != 1 && sign != -1) throw std::invalid_argument("cross_entropy sign must be +1 or -1");
    const Scalar peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (Scalar z : logits) total += std::exp(static_cast<double>(z - peak));
    const double log_prob = static_cast<double>(logits[target] - peak) - std::log(total);

    LossResult result;
    result.loss = -sign * log_prob;
    result.grad = softmax(logits);
    result.grad[target] -= Scalar{1};
    if (sign < 0) {
        for (auto& v : result.grad.data()) v = -v;
    }
    return result;
}

LossResult binary_cross_entropy(std::span<const Scalar> logits, std::span<const Scalar> targets)
{
    if (logits.size() != targets.size() || logits.empty()) {
        throw std::invalid_argument("binary_cross_entropy needs equal, non-empty logits and targets");
    }
    const double n = static_cast<double>(logits.size());
    LossResult result;
    result.grad = Tensor({logits.size()});
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i];
        const double y = targets[i];
        // log(1 + exp(-|z|)) form avoids overflow for large |z|
        result.loss += (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)))) / n;
        const double p = 1.0 / (1.0 + std::exp(-z));
        result.grad[i] = static_cast<Scalar>((p - y) / n);
    }
    return result;
}

}  // namespace ditmos::nn
