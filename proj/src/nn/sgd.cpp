#include "ditmos/nn/sgd.hpp"

#include <cmath>
#include <stdexcept>

namespace ditmos::nn {

double SgdState::rate_at(std::size_t iteration) const
{
    const auto decays = static_cast<double>(iteration / decay_every_iterations);
    return learning_rate * std::pow(decay_factor, decays);
}

void SgdState::validate() const
{
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw std::invalid_argument("decay factor must be in (0, 1]");
    if (decay_every_iterations == 0) throw std::invalid_argument("decay interval must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
}

void sgd_apply(Model& model, const Gradients& grads, double rate)
{
    auto& params = model.parameters();
    if (grads.size() != params.size()) throw std::invalid_argument("gradient count does not match parameters");
    const auto lr = static_cast<Scalar>(rate);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].shape()) {
            throw std::invalid_argument("gradient " + std::to_string(i) + " has shape " +
                                        shape_string(grads[i].shape()) + ", parameter has " +
                                        shape_string(params[i].shape()));
        }
        Scalar* p = params[i].raw();
        const Scalar* g = grads[i].raw();
        const std::size_t n = params[i].size();
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) p[j] -= lr * g[j];
    }
}

void sgd_step(Model& model, const Gradients& grads, const SgdState& state, std::size_t iteration)
{
    state.validate();
    sgd_apply(model, grads, state.rate_at(iteration));
}

void scale_gradients(Gradients& grads, Scalar factor)
{
    for (auto& g : grads) {
        for (auto& v : g.data()) v *= factor;
    }
}

MomentumSgd::MomentumSgd(const Model& model, double momentum) : momentum_(momentum)
{
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (momentum > 0.0) velocity_ = model.zero_gradients();
}

void MomentumSgd::apply(Model& model, const Gradients& grads, double rate)
{
    if (momentum_ == 0.0) {
        sgd_apply(model, grads, rate);
        return;
    }
    if (grads.size() != velocity_.size()) throw std::invalid_argument("gradient count does not match parameters");
    const auto mu = static_cast<Scalar>(momentum_);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].shape() != velocity_[i].shape()) throw std::invalid_argument("gradient shape mismatch");
        Scalar* v = velocity_[i].raw();
        const Scalar* g = grads[i].raw();
        const std::size_t n = velocity_[i].size();
#pragma omp simd
        for (std::size_t j = 0; j < n; ++j) v[j] = mu * v[j] + g[j];
    }
    sgd_apply(model, velocity_, rate);
}

}  // namespace ditmos::nn
