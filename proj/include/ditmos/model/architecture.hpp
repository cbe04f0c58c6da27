#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ditmos/nn/model.hpp"

namespace ditmos::model {

using nn::LayerSpec;

/// conv -> relu -> maxpool for every entry of `filters`.
std::vector<LayerSpec> conv_stack(const std::vector<std::size_t>& filters, std::size_t kernel_width = 5,
                                  std::size_t pool_width = 2);

/// Layer lists for the selector, the classifiers and the strong model.
/// Classifier layers are stored without aggregation; build_composite
/// inserts the concat-channels layers.
struct ArchitectureSpec {
    std::size_t in_channels = 3;
    std::size_t in_length = 128;
    std::size_t num_classifiers = 6;
    std::size_t num_classes = 8;
    std::vector<LayerSpec> selector_layers;
    std::vector<LayerSpec> classifier_layers;
    std::vector<LayerSpec> strong_layers;
    /// Hidden FC width of the single-classifier baseline.
    std::size_t sigcla_hidden = 64;

    /// Selector/classifier conv filters [8,8,4], kernel 5, pool 2; strong
    /// model conv filters [64,64,64,32,32,16] then FC 256, pooling only
    /// while the length is at least 2.
    static ArchitectureSpec defaults(std::size_t in_channels, std::size_t in_length, std::size_t num_classes,
                                     std::size_t num_classifiers);
    /// Same as defaults() with explicit selector/classifier filters.
    static ArchitectureSpec with_filters(std::size_t in_channels, std::size_t in_length, std::size_t num_classes,
                                         std::size_t num_classifiers, const std::vector<std::size_t>& selector_filters,
                                         const std::vector<std::size_t>& classifier_filters,
                                         std::size_t kernel_width = 5);

    /// Throws std::invalid_argument when a FC head width is wrong or a layer
    /// is malformed.
    void validate() const;

    nn::ModelSpec selector_spec() const;
    nn::ModelSpec classifier_spec() const;
    nn::ModelSpec strong_spec() const;
    nn::ModelSpec sigcla_spec() const;
};

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec architecture_from_json(const nlohmann::json& doc);

nlohmann::json layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const nlohmann::json& doc);

/// Conv block ranges [begin, end): each block starts at a conv layer (or at
/// the concat layer directly before it) and runs until the next block.
struct LayerRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};
std::vector<LayerRange> conv_blocks(const nn::ModelSpec& spec);

nn::Model build_strong(const ArchitectureSpec& spec, std::uint64_t seed);
/// A standalone classifier-shaped network (no aggregation inputs).
nn::Model build_weak(const ArchitectureSpec& spec, std::uint64_t seed);
/// Six conv blocks (selector then classifier filters) and two FC layers;
/// pools that would shrink the length below 1 are dropped.
nn::Model build_sigcla(const ArchitectureSpec& spec, std::uint64_t seed);

/// Layer index of the last layer of the strong model's final conv block.
std::size_t strong_feature_layer(const nn::Model& strong);

}  // namespace ditmos::model
