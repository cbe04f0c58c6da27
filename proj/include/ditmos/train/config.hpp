#pragma once

#include <cstddef>
#include <cstdint>

#include <json.hpp>

#include "ditmos/nn/sgd.hpp"

namespace ditmos::train {

struct LossCoefficients {
    double alpha = 0.1;   // single-correct term
    double beta = 0.1;    // none-correct (union) term
    double gamma = 0.03;  // multi-correct (overlap) term

    void validate() const;
    friend bool operator==(const LossCoefficients&, const LossCoefficients&) = default;
};

struct TrainConfig {
    /// Adversarial iterations (one selector phase plus one classifier phase each).
    std::size_t iterations = 20;
    std::size_t epochs_per_phase = 6;
    std::size_t batch_size = 16;
    /// Epochs of plain cross-entropy training per classifier before the
    /// adversarial loop, and for strong/weak reference models.
    std::size_t pretrain_epochs = 6;
    /// Epochs for baselines trained from scratch; 0 means
    /// pretrain_epochs + iterations * epochs_per_phase.
    std::size_t baseline_epochs = 0;
    nn::SgdState sgd;
    LossCoefficients coefficients;
    bool random_split = false;
    bool synchronous = false;
    bool no_aggregation = false;
    /// Regenerate routing labels at every epoch instead of every iteration.
    bool regenerate_per_epoch = false;
    /// Early stop after this many iterations without a new best validation
    /// overall accuracy; 0 disables.
    std::size_t patience = 0;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t resolved_baseline_epochs() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Per-component seeds derived from one global seed by fixed offsets.
struct SeedPlan {
    std::uint64_t global = 0;

    std::uint64_t data() const { return global; }
    std::uint64_t test_split() const { return global + 101; }
    std::uint64_t strong() const { return global + 202; }
    std::uint64_t clustering() const { return global + 303; }
    std::uint64_t composite() const { return global + 404; }
    std::uint64_t pretrain() const { return global + 505; }
    std::uint64_t adversarial() const { return global + 606; }
    std::uint64_t baseline() const { return global + 707; }
};

nlohmann::json to_json(const LossCoefficients& c);
nlohmann::json to_json(const TrainConfig& c);
/// Missing fields keep their defaults; unknown fields are rejected.
TrainConfig train_config_from_json(const nlohmann::json& doc);

}  // namespace ditmos::train
