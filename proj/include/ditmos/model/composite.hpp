#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "ditmos/model/architecture.hpp"
#include "ditmos/nn/model.hpp"

namespace ditmos::model {

using nn::Tensor;

/// One selector routing each input to one of m classifiers. With
/// aggregation, the selector's post-pool conv1/conv2 outputs (the taps) are
/// channel-concatenated into the chosen classifier before its conv2/conv3.
struct CompositeModel {
    nn::Model selector;
    std::vector<nn::Model> classifiers;
    bool aggregation_enabled = true;
    /// Let classifier losses flow back through the taps into the selector.
    bool train_taps = false;
    /// Selector layers whose outputs are tapped; empty without aggregation.
    std::vector<std::size_t> tap_layers;

    std::size_t size() const noexcept { return classifiers.size(); }
    std::size_t num_classes() const;

    friend bool operator==(const CompositeModel&, const CompositeModel&) = default;
};

inline constexpr std::uint64_t kSelectorSeedOffset = 1'000'003;

/// Selector seeded with seed + kSelectorSeedOffset, classifier i with seed + i.
/// Requires m >= 2. Aggregation weights on tapped channels start at zero so a
/// fresh classifier computes the same function as its tap-free counterpart.
CompositeModel build_composite(const ArchitectureSpec& spec, bool aggregation, std::uint64_t seed);

/// Assembles a composite from existing networks (m >= 1) and checks that the
/// tap shapes line up.
CompositeModel make_composite(nn::Model selector, std::vector<nn::Model> classifiers, bool aggregation);

/// Classifier spec with concat-channels layers inserted before conv2/conv3.
nn::ModelSpec aggregated_classifier_spec(const nn::ModelSpec& classifier, const nn::ModelSpec& selector);

/// Post-pool outputs of the selector's first two conv blocks.
std::vector<std::size_t> selector_tap_layers(const nn::Model& selector);

/// Zeroes the weights reading tapped channels and rescales the remaining
/// weights to the fan-in of the classifier's own channels.
void reset_tap_weights(nn::Model& classifier);

struct AggregatedLogits {
    Tensor selector_logits;
    Tensor classifier_logits;
};

nn::ActivationTape run_selector(const CompositeModel& composite, const Tensor& input);
/// Tap tensors from a recorded selector tape; empty without aggregation.
std::vector<Tensor> taps_from(const CompositeModel& composite, const nn::ActivationTape& selector_tape);
/// Zero tensors shaped like the taps (used while taps are switched off).
std::vector<Tensor> zero_taps(const CompositeModel& composite);
nn::ActivationTape run_classifier(const CompositeModel& composite, std::size_t index, const Tensor& input,
                                  std::span<const Tensor> taps, bool record);

AggregatedLogits forward_with_aggregation(const CompositeModel& composite, const Tensor& input,
                                          std::size_t classifier_index);
/// argmax of the selector logits, lowest index on ties.
std::size_t route(const CompositeModel& composite, const Tensor& input);
/// Selector routing followed by the chosen classifier.
AggregatedLogits infer(const CompositeModel& composite, const Tensor& input, std::size_t* chosen = nullptr);

/// Serialized byte size of the selector plus all classifiers.
std::size_t flash_size(const CompositeModel& composite);

/// Composite container, little-endian:
///   "DTMC" | u32 version | u32 header_len | header JSON (UTF-8) |
///   u32 model_count | model_count x { u64 len | DTMS model bytes }
/// The first model is the selector. `metadata` is stored under "metadata".
std::vector<std::uint8_t> serialize_composite(const CompositeModel& composite, const nlohmann::json& metadata = {});
CompositeModel deserialize_composite(const std::vector<std::uint8_t>& bytes, nlohmann::json* metadata = nullptr);
void save_composite(const std::filesystem::path& path, const CompositeModel& composite,
                    const nlohmann::json& metadata = {});
CompositeModel load_composite(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

}  // namespace ditmos::model
