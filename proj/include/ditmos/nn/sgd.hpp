#pragma once

#include <cstddef>

#include "ditmos/nn/model.hpp"

namespace ditmos::nn {

/// Plain SGD with step decay: lr(it) = lr0 * decay^floor(it / decay_every).
struct SgdState {
    double learning_rate = 0.001;
    double decay_factor = 0.5;
    std::size_t decay_every_iterations = 5;
    /// Heavy-ball coefficient in [0, 1); 0 is plain SGD.
    double momentum = 0.0;

    double rate_at(std::size_t iteration) const;
    void validate() const;
    friend bool operator==(const SgdState&, const SgdState&) = default;
};

/// p <- p - lr(iteration) * g, in place.
void sgd_step(Model& model, const Gradients& grads, const SgdState& state, std::size_t iteration);

/// p <- p - rate * g, in place.
void sgd_apply(Model& model, const Gradients& grads, double rate);

void scale_gradients(Gradients& grads, Scalar factor);

/// v <- momentum * v + g; p <- p - rate * v. With momentum 0 this is sgd_apply.
class MomentumSgd {
public:
    MomentumSgd(const Model& model, double momentum);
    void apply(Model& model, const Gradients& grads, double rate);

private:
    double momentum_;
    Gradients velocity_;
};

}  // namespace ditmos::nn
