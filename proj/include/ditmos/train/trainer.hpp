#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ditmos/data/dataset.hpp"
#include "ditmos/model/composite.hpp"
#include "ditmos/nn/model.hpp"
#include "ditmos/train/config.hpp"
#include "ditmos/train/objective.hpp"

namespace ditmos::train {

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // on the training data, measured during the epoch
};

/// Mini-batch SGD on cross-entropy. The learning rate follows cfg.sgd with
/// the epoch index as the decay counter.
std::vector<EpochStats> train_model(nn::Model& model, const data::Dataset& data, const TrainConfig& cfg,
                                    std::size_t epochs, std::uint64_t seed);

double model_accuracy(const nn::Model& model, const data::Dataset& data);

/// Trains classifier i on the samples with subset id i for
/// cfg.pretrain_epochs, with aggregation taps held at zero. The selector is
/// untouched. Returns the indices of classifiers skipped for an empty subset.
std::vector<std::size_t> pretrain_classifiers(model::CompositeModel& composite, const data::Dataset& subsets,
                                              const TrainConfig& cfg, std::uint64_t seed);

/// Runs every classifier on every sample (with the current selector's taps)
/// and applies routing_label_for.
RoutingLabels generate_routing_labels(const model::CompositeModel& composite, const data::Dataset& data);

struct EvalResult {
    std::size_t n = 0;
    double overall = 0.0;   // chosen classifier correct
    double selector = 0.0;  // chosen index among the correct classifiers
    double uni = 0.0;       // at least one classifier correct
    std::vector<double> per_classifier;

    nlohmann::json to_json() const;
};
EvalResult evaluate(const model::CompositeModel& composite, const data::Dataset& data);

struct PhaseRecord {
    std::size_t iteration = 0;
    std::string phase;  // "selector", "classifier" or "joint"
    double learning_rate = 0.0;
    double loss_selector = 0.0;
    double loss_single = 0.0;
    double loss_union = 0.0;
    double loss_overlap = 0.0;
    double loss_total = 0.0;
    double overall = 0.0;
    double selector_accuracy = 0.0;
    double union_accuracy = 0.0;

    nlohmann::json to_json() const;
};

struct TrainHistory {
    std::vector<PhaseRecord> records;
    std::size_t iterations_run = 0;
    bool early_stopped = false;

    void write_jsonl(const std::filesystem::path& path) const;
};

/// Alternating selector/classifier phases. Accuracies in the history are
/// measured on `validation` when given, otherwise on `train`; with
/// cfg.patience > 0 and a validation set the best composite is kept.
TrainHistory adversarial_train(model::CompositeModel& composite, const data::Dataset& train, const TrainConfig& cfg,
                               const data::Dataset* validation = nullptr);

/// Selector and classifiers updated together through the gated-mixture
/// loss for `epochs` epochs.
TrainHistory joint_train(model::CompositeModel& composite, const data::Dataset& train, const TrainConfig& cfg,
                         std::size_t epochs, const data::Dataset* validation = nullptr);

/// Parameter gradients of one sample's adversarial objective. The selector
/// receives the routing-label cross-entropy in the selector phase; in the
/// classifier phase it only receives gradient through the taps, and only
/// when composite.train_taps is set.
struct CompositeGradients {
    CompositeLoss loss;
    nn::Gradients selector;
    std::vector<nn::Gradients> classifiers;
};
enum class Phase { Selector, Classifier };
/// `routing` is the selector target in the selector phase; in the
/// classifier phase it names the classifier receiving the positive term
/// (normally the selector argmax).
CompositeGradients sample_gradients(const model::CompositeModel& composite, const nn::Tensor& input,
                                    std::size_t true_class, std::size_t routing, Phase phase,
                                    const LossCoefficients& coefficients);
/// The scalar whose gradient sample_gradients computes: the routing
/// cross-entropy in the selector phase, the full objective in the classifier
/// phase. The per-classifier correctness is fixed to `correct`; taps are
/// recomputed from the selector unless `frozen_taps` is given.
double sample_objective(const model::CompositeModel& composite, const nn::Tensor& input, std::size_t true_class,
                        std::size_t routing, const std::vector<bool>& correct, Phase phase,
                        const LossCoefficients& coefficients, const std::vector<nn::Tensor>* frozen_taps = nullptr);

/// Checkpoint = composite container with the TrainConfig under
/// metadata.train_config.
void save_checkpoint(const std::filesystem::path& path, const model::CompositeModel& composite, const TrainConfig& cfg,
                     const nlohmann::json& extra = {});
model::CompositeModel load_checkpoint(const std::filesystem::path& path, TrainConfig* cfg = nullptr,
                                      nlohmann::json* metadata = nullptr);

}  // namespace ditmos::train
