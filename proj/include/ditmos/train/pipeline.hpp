#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ditmos/data/dataset.hpp"
#include "ditmos/data/splitting.hpp"
#include "ditmos/model/architecture.hpp"
#include "ditmos/model/composite.hpp"
#include "ditmos/train/config.hpp"
#include "ditmos/train/trainer.hpp"

namespace ditmos::train {

enum class BaselineMode { SigCla, Ensemble, SyncMoe, NaiveSelector };
std::string_view baseline_name(BaselineMode mode);
BaselineMode baseline_from_name(std::string_view name);

struct BaselineResult {
    BaselineMode mode = BaselineMode::SigCla;
    double accuracy = 0.0;
    std::size_t parameter_count = 0;
    /// Per test sample predicted class.
    std::vector<std::size_t> predictions;
    /// Standalone networks (sigcla: one, ensemble: two, naive: the classifiers).
    std::vector<nn::Model> models;
    /// sync_moe and naive_selector route through a composite.
    std::optional<model::CompositeModel> composite;

    nlohmann::json to_json() const;
};

/// Class predicted from the mean of the members' softmax outputs.
std::size_t ensemble_predict(std::span<const nn::Model> members, const nn::Tensor& input);

/// sigcla: the six-conv, two-FC single network trained with cross-entropy.
/// ensemble: two weak classifiers trained independently, softmax-averaged.
/// sync_moe: selector and m classifiers trained together from scratch through
/// the gated-mixture loss, no aggregation, top-1 routing at test time.
/// naive_selector: m weak classifiers trained on all data, then a selector
/// trained on their multi-hot correctness masks with binary cross-entropy.
BaselineResult train_baseline(BaselineMode mode, const model::ArchitectureSpec& arch, const data::Dataset& train,
                              const data::Dataset& test, const TrainConfig& cfg, std::uint64_t seed);

struct SplitResult {
    data::Dataset subsets;
    std::vector<std::size_t> assignments;
    std::vector<std::size_t> sizes;
};

/// K-Means on the strong model's features, or uniform random ids when
/// `random` is set (the strong model may then be null).
SplitResult split_training_data(const nn::Model* strong, const data::Dataset& train, std::size_t m, bool random,
                                std::uint64_t seed);

struct DitmosRun {
    model::CompositeModel composite;
    SplitResult split;
    EvalResult pretrained;  // after pre-training, before the adversarial loop
    EvalResult final;
    TrainHistory history;
};

/// Split, build, pre-train, then adversarial (or, with cfg.synchronous,
/// joint mixture) training. Honors cfg.random_split and cfg.no_aggregation.
DitmosRun run_ditmos(const model::ArchitectureSpec& arch, const nn::Model* strong, const data::Dataset& train,
                     const data::Dataset& test, const TrainConfig& cfg, const SeedPlan& seeds);

}  // namespace ditmos::train
