#include "ditmos/data/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "ditmos/model/architecture.hpp"

namespace ditmos::data {

FeatureMatrix extract_layer_features(const nn::Model& model, std::size_t layer, const Dataset& dataset)
{
    if (layer >= model.layers().size()) throw std::out_of_range("feature layer index out of range");
    if (dataset.sample_shape() != model.input_shape()) {
        throw std::invalid_argument("dataset samples " + nn::shape_string(dataset.sample_shape()) +
                                    " do not match model input " + nn::shape_string(model.input_shape()));
    }
    FeatureMatrix fm;
    fm.rows = dataset.size();
    fm.cols = nn::shape_size(model.layers()[layer].out_shape);
    fm.values.reserve(fm.rows * fm.cols);
    for (const auto& sample : dataset.samples) {
        // Only the prefix up to `layer` is needed.
        nn::Tensor current = sample;
        for (std::size_t i = 0; i <= layer; ++i) current = nn::forward_layer(model, i, current);
        for (nn::Scalar v : current.data()) fm.values.push_back(static_cast<double>(v));
    }
    return fm;
}

FeatureMatrix extract_features(const nn::Model& strong, const Dataset& dataset)
{
    return extract_layer_features(strong, model::strong_feature_layer(strong), dataset);
}

FeatureMatrix standardize(const FeatureMatrix& features)
{
    FeatureMatrix out = features;
    if (features.rows == 0) return out;
    for (std::size_t c = 0; c < features.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < features.rows; ++r) mean += features.at(r, c);
        mean /= static_cast<double>(features.rows);
        double var = 0.0;
        for (std::size_t r = 0; r < features.rows; ++r) var += (features.at(r, c) - mean) * (features.at(r, c) - mean);
        const double sd = std::sqrt(var / static_cast<double>(features.rows));
        for (std::size_t r = 0; r < features.rows; ++r) {
            out.at(r, c) = sd > 0.0 ? (features.at(r, c) - mean) / sd : 0.0;
        }
    }
    return out;
}

namespace {

double squared_distance(const double* a, const double* b, std::size_t d)
{
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

// Nearest centroid per row, lowest index on ties. Returns the inertia.
double assign_nearest(const FeatureMatrix& x, const std::vector<double>& centroids, std::size_t k,
                      std::vector<std::size_t>& assignments, std::vector<double>& dist)
{
    double inertia = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            const double d = squared_distance(x.row(r), centroids.data() + j * x.cols, x.cols);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        assignments[r] = best;
        dist[r] = best_d;
        inertia += best_d;
    }
    return inertia;
}

std::vector<double> plus_plus_init(const FeatureMatrix& x, std::size_t k, std::mt19937_64& rng)
{
    std::vector<double> centroids;
    centroids.reserve(k * x.cols);
    std::uniform_int_distribution<std::size_t> first(0, x.rows - 1);
    const std::size_t f = first(rng);
    centroids.insert(centroids.end(), x.row(f), x.row(f) + x.cols);
    std::vector<double> closest(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) closest[r] = squared_distance(x.row(r), centroids.data(), x.cols);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t j = 1; j < k; ++j) {
        double total = 0.0;
        for (double d : closest) total += d;
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            pick = x.rows - 1;
            for (std::size_t r = 0; r < x.rows; ++r) {
                acc += closest[r];
                if (acc >= target && closest[r] > 0.0) {
                    pick = r;
                    break;
                }
            }
        } else {
            pick = first(rng);
        }
        const std::size_t base = centroids.size();
        centroids.insert(centroids.end(), x.row(pick), x.row(pick) + x.cols);
        for (std::size_t r = 0; r < x.rows; ++r) {
            closest[r] = std::min(closest[r], squared_distance(x.row(r), centroids.data() + base, x.cols));
        }
    }
    return centroids;
}

}  // namespace

KMeansResult kmeans(const FeatureMatrix& features, std::size_t k, std::uint64_t seed, std::size_t max_iters,
                    double tol)
{
    if (k == 0) throw std::invalid_argument("kmeans needs k >= 1");
    if (k > features.rows) {
        throw std::invalid_argument("kmeans k=" + std::to_string(k) + " exceeds " + std::to_string(features.rows) +
                                    " rows");
    }
    const std::size_t d = features.cols;
    std::mt19937_64 rng(seed);
    KMeansResult result;
    result.centroids = plus_plus_init(features, k, rng);
    result.assignments.assign(features.rows, 0);
    std::vector<double> dist(features.rows);

    for (std::size_t it = 0; it < max_iters; ++it) {
        double inertia = assign_nearest(features, result.centroids, k, result.assignments, dist);

        std::vector<std::size_t> counts(k, 0);
        for (std::size_t a : result.assignments) ++counts[a];
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] != 0) continue;
            const auto largest = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            std::size_t far = features.rows;
            for (std::size_t r = 0; r < features.rows; ++r) {
                if (result.assignments[r] == largest && (far == features.rows || dist[r] > dist[far])) far = r;
            }
            result.assignments[far] = j;
            inertia -= dist[far];
            dist[far] = 0.0;
            --counts[largest];
            counts[j] = 1;
            std::copy_n(features.row(far), d, result.centroids.begin() + static_cast<std::ptrdiff_t>(j * d));
        }
        result.inertia_history.push_back(inertia);

        std::vector<double> next(k * d, 0.0);
        for (std::size_t r = 0; r < features.rows; ++r) {
            double* c = next.data() + result.assignments[r] * d;
            for (std::size_t i = 0; i < d; ++i) c[i] += features.at(r, i);
        }
        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t i = 0; i < d; ++i) next[j * d + i] /= static_cast<double>(counts[j]);
            shift = std::max(shift, std::sqrt(squared_distance(next.data() + j * d, result.centroids.data() + j * d, d)));
        }
        result.centroids = std::move(next);
        result.iterations = it + 1;
        if (shift < tol) break;
    }
    result.inertia = assign_nearest(features, result.centroids, k, result.assignments, dist);
    return result;
}

Dataset make_subsets(const Dataset& train, const std::vector<std::size_t>& assignments, std::size_t num_subsets)
{
    if (assignments.size() != train.size()) {
        throw std::invalid_argument("got " + std::to_string(assignments.size()) + " assignments for " +
                                    std::to_string(train.size()) + " samples");
    }
    Dataset out = train;
    out.subset_ids.resize(train.size());
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        if (assignments[i] >= num_subsets) {
            throw std::invalid_argument("subset id " + std::to_string(assignments[i]) + " out of range for " +
                                        std::to_string(num_subsets) + " subsets");
        }
        out.subset_ids[i] = static_cast<int>(assignments[i]);
    }
    return out;
}

std::vector<std::size_t> random_assignments(std::size_t n, std::size_t m, std::uint64_t seed)
{
    if (m == 0) throw std::invalid_argument("random_assignments needs m >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::vector<std::size_t> out(n);
    for (auto& a : out) a = pick(rng);
    return out;
}

std::vector<std::size_t> subset_sizes(const Dataset& dataset, std::size_t num_subsets)
{
    std::vector<std::size_t> sizes(num_subsets, 0);
    for (int id : dataset.subset_ids) {
        if (id >= 0 && static_cast<std::size_t>(id) < num_subsets) ++sizes[static_cast<std::size_t>(id)];
    }
    return sizes;
}

void write_assignments_csv(const std::filesystem::path& path, const std::vector<std::size_t>& assignments)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t a : assignments) out << a << '\n';
}

std::vector<std::size_t> read_assignments_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::size_t> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(line, &used);
            if (v < 0) throw std::invalid_argument("negative");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": invalid subset id '" + line + "'");
        }
    }
    return out;
}

}  // namespace ditmos::data
