#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "ditmos/nn/tensor.hpp"
#include "ditmos/train/config.hpp"

namespace ditmos::train {

using nn::Tensor;

enum class Provenance { Single, MultiHighestConfidence, NoneLowestConfidence };
std::string_view provenance_name(Provenance p);

/// One classifier index per training sample.
struct RoutingLabels {
    std::vector<std::size_t> labels;
    std::vector<Provenance> provenance;
};

/// Label rule for one sample: the only correct classifier; among several
/// correct ones the most confident; with none correct the least confident.
/// Confidence is the softmax probability of the true class; ties go to the
/// lowest index.
std::size_t routing_label_for(const std::vector<bool>& correct, std::span<const double> confidence,
                              Provenance* provenance = nullptr);

enum class SampleCase { Single, Multi, None };

/// Per-sample objective with its gradients w.r.t. every set of logits.
/// Components are unweighted: union sums the m cross-entropies and overlap
/// sums the negated ones.
struct CompositeLoss {
    double selector = 0.0;
    double single = 0.0;
    double uni = 0.0;
    double overlap = 0.0;
    double total = 0.0;
    SampleCase kind = SampleCase::Single;
    std::vector<bool> correct;
    Tensor selector_grad;
    /// One gradient per classifier; an empty Tensor means no contribution.
    std::vector<Tensor> classifier_grads;
};

/// total = CE(selector, routing) + alpha * CE(classifier routing) for
/// single/multi-correct samples + beta * sum_j CE(classifier j) when no
/// classifier is correct + gamma * sum_k (-CE(classifier k)) over correct
/// classifiers except the most confident one when several are correct.
/// `fixed_correct` overrides the argmax-based correctness mask.
CompositeLoss composite_loss(const Tensor& selector_logits, std::span<const Tensor> classifier_logits,
                             std::size_t true_class, std::size_t routing_label, const LossCoefficients& coefficients,
                             const std::vector<bool>* fixed_correct = nullptr);

/// Selector-gated mixture: -log sum_j softmax(s)_j softmax(z_j)[y].
struct MixtureLoss {
    double loss = 0.0;
    Tensor selector_grad;
    std::vector<Tensor> classifier_grads;
};
MixtureLoss mixture_loss(const Tensor& selector_logits, std::span<const Tensor> classifier_logits,
                         std::size_t true_class);

}  // namespace ditmos::train
