#include "ditmos/train/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ditmos/nn/loss.hpp"

namespace ditmos::train {

std::string_view provenance_name(Provenance p)
{
    switch (p) {
    case Provenance::Single: return "single";
    case Provenance::MultiHighestConfidence: return "multi";
    case Provenance::NoneLowestConfidence: return "none";
    }
    return "?";
}

std::size_t routing_label_for(const std::vector<bool>& correct, std::span<const double> confidence,
                              Provenance* provenance)
{
    if (correct.empty() || correct.size() != confidence.size()) {
        throw std::invalid_argument("routing label needs one confidence per classifier");
    }
    std::size_t count = 0;
    std::size_t best = correct.size();
    for (std::size_t j = 0; j < correct.size(); ++j) {
        if (!correct[j]) continue;
        ++count;
        if (best == correct.size() || confidence[j] > confidence[best]) best = j;
    }
    if (count == 1) {
        if (provenance) *provenance = Provenance::Single;
        return best;
    }
    if (count > 1) {
        if (provenance) *provenance = Provenance::MultiHighestConfidence;
        return best;
    }
    std::size_t worst = 0;
    for (std::size_t j = 1; j < confidence.size(); ++j) {
        if (confidence[j] < confidence[worst]) worst = j;
    }
    if (provenance) *provenance = Provenance::NoneLowestConfidence;
    return worst;
}

namespace {

void add_scaled(Tensor& into, const Tensor& grad, double weight)
{
    if (into.size() == 0) {
        into = Tensor(grad.shape());
    }
    const auto w = static_cast<nn::Scalar>(weight);
    auto dst = into.data();
    auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
}

}  // namespace

CompositeLoss composite_loss(const Tensor& selector_logits, std::span<const Tensor> classifier_logits,
                             std::size_t true_class, std::size_t routing_label, const LossCoefficients& coefficients,
                             const std::vector<bool>* fixed_correct)
{
    const std::size_t m = classifier_logits.size();
    if (m == 0) throw std::invalid_argument("composite loss needs at least one classifier");
    if (selector_logits.size() != m) {
        throw std::invalid_argument("selector has " + std::to_string(selector_logits.size()) + " outputs for " +
                                    std::to_string(m) + " classifiers");
    }
    if (routing_label >= m) throw std::out_of_range("routing label out of range");
    if (fixed_correct && fixed_correct->size() != m) throw std::invalid_argument("correctness mask size mismatch");

    CompositeLoss out;
    out.correct.resize(m);
    out.classifier_grads.resize(m);
    std::vector<double> confidence(m);
    std::vector<nn::LossResult> ce(m);
    std::size_t n_correct = 0;
    for (std::size_t j = 0; j < m; ++j) {
        if (true_class >= classifier_logits[j].size()) throw std::out_of_range("true class out of range");
        out.correct[j] =
            fixed_correct ? (*fixed_correct)[j] : nn::argmax(classifier_logits[j].data()) == true_class;
        n_correct += out.correct[j] ? 1 : 0;
        ce[j] = nn::cross_entropy(classifier_logits[j].data(), true_class);
        confidence[j] = std::exp(-ce[j].loss);
    }

    auto sel = nn::cross_entropy(selector_logits.data(), routing_label);
    out.selector = sel.loss;
    out.selector_grad = std::move(sel.grad);

    if (n_correct == 0) {
        out.kind = SampleCase::None;
        for (std::size_t j = 0; j < m; ++j) {
            out.uni += ce[j].loss;
            add_scaled(out.classifier_grads[j], ce[j].grad, coefficients.beta);
        }
    } else {
        out.kind = n_correct == 1 ? SampleCase::Single : SampleCase::Multi;
        out.single = ce[routing_label].loss;
        add_scaled(out.classifier_grads[routing_label], ce[routing_label].grad, coefficients.alpha);
        if (n_correct > 1) {
            const std::size_t keep = routing_label_for(out.correct, confidence);
            for (std::size_t j = 0; j < m; ++j) {
                if (!out.correct[j] || j == keep) continue;
                auto neg = nn::cross_entropy(classifier_logits[j].data(), true_class, -1);
                out.overlap += neg.loss;
                add_scaled(out.classifier_grads[j], neg.grad, coefficients.gamma);
            }
        }
    }
    out.total = out.selector + coefficients.alpha * out.single + coefficients.beta * out.uni +
                coefficients.gamma * out.overlap;
    return out;
}

MixtureLoss mixture_loss(const Tensor& selector_logits, std::span<const Tensor> classifier_logits,
                         std::size_t true_class)
{
    const std::size_t m = classifier_logits.size();
    if (m == 0 || selector_logits.size() != m) throw std::invalid_argument("mixture needs one gate per classifier");
    const Tensor gate = nn::softmax(selector_logits.data());
    // log(g_j p_j) per expert, combined with log-sum-exp.
    std::vector<double> log_joint(m);
    std::vector<nn::LossResult> ce(m);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        ce[j] = nn::cross_entropy(classifier_logits[j].data(), true_class);
        log_joint[j] = std::log(std::max(static_cast<double>(gate[j]), 1e-300)) - ce[j].loss;
        top = std::max(top, log_joint[j]);
    }
    double sum = 0.0;
    for (double v : log_joint) sum += std::exp(v - top);
    const double log_p = top + std::log(sum);

    MixtureLoss out;
    out.loss = -log_p;
    out.selector_grad = Tensor({m});
    out.classifier_grads.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double posterior = std::exp(log_joint[j] - log_p);
        // d/ds_j = g_j - g_j p_j / P = g_j - posterior_j.
        out.selector_grad[j] = static_cast<nn::Scalar>(static_cast<double>(gate[j]) - posterior);
        out.classifier_grads[j] = ce[j].grad;
        for (auto& v : out.classifier_grads[j].data()) v *= static_cast<nn::Scalar>(posterior);
    }
    return out;
}

}  // namespace ditmos::train
