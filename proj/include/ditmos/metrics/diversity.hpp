#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ditmos/data/dataset.hpp"
#include "ditmos/data/splitting.hpp"
#include "ditmos/model/composite.hpp"
#include "ditmos/nn/model.hpp"

namespace ditmos::metrics {

using data::FeatureMatrix;

/// Linear CKA: ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F), columns mean-centred
/// first unless `center` is false. Clamped to [0, 1].
double cka(const FeatureMatrix& x, const FeatureMatrix& y, bool center = true);

/// Symmetric p x p matrix of pairwise CKA values.
std::vector<std::vector<double>> cka_matrix(std::span<const FeatureMatrix> features, bool center = true);
/// Mean of the strictly upper triangle.
double mean_off_diagonal(const std::vector<std::vector<double>>& matrix);

/// Sorted indices of correctly classified test samples.
struct CorrectSet {
    std::string model_id;
    std::vector<std::size_t> indices;
};

/// Predicted class per sample (argmax, lowest index on ties).
std::vector<std::size_t> predict(const nn::Model& model, const data::Dataset& test);
std::vector<std::size_t> predict(const model::CompositeModel& composite, const data::Dataset& test);

CorrectSet correct_set_from(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels,
                            std::string model_id);
CorrectSet correct_set(const nn::Model& model, const data::Dataset& test, std::string model_id);
CorrectSet correct_set(const model::CompositeModel& composite, const data::Dataset& test, std::string model_id);

double accuracy(const CorrectSet& set, std::size_t n);
/// |union of sets| / n.
double union_accuracy(std::span<const CorrectSet> sets, std::size_t n);

struct OverlapReport {
    std::vector<std::vector<std::size_t>> intersections;  // |A_i ∩ A_j|, diagonal = |A_i|
    std::vector<std::vector<double>> jaccard;             // |A_i ∩ A_j| / |A_i ∪ A_j|, diagonal = 1
    std::vector<std::size_t> exclusive;                   // samples only model i gets right
    std::size_t all_correct = 0;                          // samples every model gets right
    std::size_t union_size = 0;
    /// Mean off-diagonal Jaccard index.
    double mean_pairwise_jaccard() const;
};

/// Requires at least two sets.
OverlapReport overlap_report(std::span<const CorrectSet> sets);

/// JSON with cka_matrix, union_accuracy, per-model accuracy, overlap matrix
/// and exclusive counts. Empty inputs produce empty arrays.
nlohmann::json diversity_json(const std::vector<std::vector<double>>& cka, std::span<const CorrectSet> sets,
                              std::size_t n);

}  // namespace ditmos::metrics
