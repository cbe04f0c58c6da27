#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ditmos/data/dataset.hpp"
#include "ditmos/nn/model.hpp"

namespace ditmos::data {

/// Row-major samples x features matrix.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    const double* row(std::size_t r) const { return values.data() + r * cols; }
};

/// Flattened output of `layer` for every sample.
FeatureMatrix extract_layer_features(const nn::Model& model, std::size_t layer, const Dataset& dataset);
/// Flattened post-pool output of the strong model's last conv block.
FeatureMatrix extract_features(const nn::Model& strong, const Dataset& dataset);
/// Column-wise zero mean / unit variance (constant columns left at zero).
FeatureMatrix standardize(const FeatureMatrix& features);

struct KMeansResult {
    std::vector<double> centroids;  // k x d, row-major
    std::vector<std::size_t> assignments;
    double inertia = 0.0;
    std::size_t iterations = 0;
    /// Inertia after each assignment step.
    std::vector<double> inertia_history;
};

/// Lloyd's algorithm with k-means++ seeding. Stops when no centroid moves by
/// more than `tol` (Euclidean) or after `max_iters`. An empty cluster takes
/// the point of the largest cluster farthest from its centroid. The returned
/// assignment is the nearest-centroid assignment for the returned centroids.
KMeansResult kmeans(const FeatureMatrix& features, std::size_t k, std::uint64_t seed, std::size_t max_iters = 300,
                    double tol = 1e-6);

/// Copy of `train` with subset_id = assignment.
Dataset make_subsets(const Dataset& train, const std::vector<std::size_t>& assignments, std::size_t num_subsets);
/// Uniform random subset ids in [0, m).
std::vector<std::size_t> random_assignments(std::size_t n, std::size_t m, std::uint64_t seed);
std::vector<std::size_t> subset_sizes(const Dataset& dataset, std::size_t num_subsets);

void write_assignments_csv(const std::filesystem::path& path, const std::vector<std::size_t>& assignments);
std::vector<std::size_t> read_assignments_csv(const std::filesystem::path& path);

}  // namespace ditmos::data
