#include "ditmos/metrics/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ditmos::metrics {

namespace {

std::vector<double> centred_columns(const FeatureMatrix& m, bool center)
{
    std::vector<double> out = m.values;
    if (!center || m.rows == 0) return out;
    for (std::size_t c = 0; c < m.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < m.rows; ++r) mean += m.at(r, c);
        mean /= static_cast<double>(m.rows);
        for (std::size_t r = 0; r < m.rows; ++r) out[r * m.cols + c] -= mean;
    }
    return out;
}

// ||A^T B||_F^2 for row-major n x p and n x q.
double cross_frobenius_sq(const std::vector<double>& a, std::size_t p, const std::vector<double>& b, std::size_t q,
                          std::size_t n)
{
    std::vector<double> prod(p * q, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const double* ar = a.data() + r * p;
        const double* br = b.data() + r * q;
        for (std::size_t i = 0; i < p; ++i) {
            const double av = ar[i];
            double* out = prod.data() + i * q;
            for (std::size_t j = 0; j < q; ++j) out[j] += av * br[j];
        }
    }
    double s = 0.0;
    for (double v : prod) s += v * v;
    return s;
}

}  // namespace

double cka(const FeatureMatrix& x, const FeatureMatrix& y, bool center)
{
    if (x.rows != y.rows) {
        throw std::invalid_argument("cka needs equal row counts, got " + std::to_string(x.rows) + " and " +
                                    std::to_string(y.rows));
    }
    if (x.rows == 0 || x.cols == 0 || y.cols == 0) throw std::invalid_argument("cka of an empty matrix");
    const auto xc = centred_columns(x, center);
    const auto yc = centred_columns(y, center);
    const double num = cross_frobenius_sq(yc, y.cols, xc, x.cols, x.rows);
    const double xx = std::sqrt(cross_frobenius_sq(xc, x.cols, xc, x.cols, x.rows));
    const double yy = std::sqrt(cross_frobenius_sq(yc, y.cols, yc, y.cols, y.rows));
    if (xx == 0.0 || yy == 0.0) throw std::invalid_argument("cka undefined for a zero (or constant) feature matrix");
    return std::clamp(num / (xx * yy), 0.0, 1.0);
}

std::vector<std::vector<double>> cka_matrix(std::span<const FeatureMatrix> features, bool center)
{
    const std::size_t p = features.size();
    std::vector<std::vector<double>> out(p, std::vector<double>(p, 1.0));
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i + 1; j < p; ++j) out[i][j] = out[j][i] = cka(features[i], features[j], center);
    }
    return out;
}

double mean_off_diagonal(const std::vector<std::vector<double>>& matrix)
{
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        for (std::size_t j = i + 1; j < matrix.size(); ++j) {
            total += matrix[i][j];
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<std::size_t> predict(const nn::Model& model, const data::Dataset& test)
{
    std::vector<std::size_t> out;
    out.reserve(test.size());
    for (const auto& s : test.samples) out.push_back(nn::argmax(nn::forward(model, s, false).logits().data()));
    return out;
}

std::vector<std::size_t> predict(const model::CompositeModel& composite, const data::Dataset& test)
{
    std::vector<std::size_t> out;
    out.reserve(test.size());
    for (const auto& s : test.samples) out.push_back(nn::argmax(model::infer(composite, s).classifier_logits.data()));
    return out;
}

CorrectSet correct_set_from(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels,
                            std::string model_id)
{
    if (predictions.size() != labels.size()) throw std::invalid_argument("predictions and labels differ in length");
    CorrectSet set{std::move(model_id), {}};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] == labels[i]) set.indices.push_back(i);
    }
    return set;
}

CorrectSet correct_set(const nn::Model& model, const data::Dataset& test, std::string model_id)
{
    return correct_set_from(predict(model, test), test.labels, std::move(model_id));
}

CorrectSet correct_set(const model::CompositeModel& composite, const data::Dataset& test, std::string model_id)
{
    return correct_set_from(predict(composite, test), test.labels, std::move(model_id));
}

double accuracy(const CorrectSet& set, std::size_t n)
{
    if (n == 0) throw std::invalid_argument("accuracy over zero samples");
    return static_cast<double>(set.indices.size()) / static_cast<double>(n);
}

double union_accuracy(std::span<const CorrectSet> sets, std::size_t n)
{
    if (n == 0) throw std::invalid_argument("union accuracy over zero samples");
    std::vector<bool> hit(n, false);
    std::size_t count = 0;
    for (const auto& s : sets) {
        for (std::size_t i : s.indices) {
            if (i >= n) throw std::out_of_range("correct-set index beyond test size");
            if (!hit[i]) {
                hit[i] = true;
                ++count;
            }
        }
    }
    return static_cast<double>(count) / static_cast<double>(n);
}

double OverlapReport::mean_pairwise_jaccard() const
{
    return mean_off_diagonal(jaccard);
}

OverlapReport overlap_report(std::span<const CorrectSet> sets)
{
    if (sets.size() < 2) throw std::invalid_argument("overlap report needs at least two correct sets");
    const std::size_t p = sets.size();
    OverlapReport rep;
    rep.intersections.assign(p, std::vector<std::size_t>(p, 0));
    rep.jaccard.assign(p, std::vector<double>(p, 1.0));
    rep.exclusive.assign(p, 0);

    std::size_t n = 0;
    for (const auto& s : sets) {
        if (!s.indices.empty()) n = std::max(n, *std::max_element(s.indices.begin(), s.indices.end()) + 1);
    }
    // Membership count per sample and, for exclusive samples, the owner.
    std::vector<std::size_t> hits(n, 0), owner(n, 0);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t idx : sets[i].indices) {
            ++hits[idx];
            owner[idx] = i;
        }
    }
    for (std::size_t idx = 0; idx < n; ++idx) {
        if (hits[idx] > 0) ++rep.union_size;
        if (hits[idx] == 1) ++rep.exclusive[owner[idx]];
        if (hits[idx] == p) ++rep.all_correct;
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i; j < p; ++j) {
            std::vector<std::size_t> common;
            std::set_intersection(sets[i].indices.begin(), sets[i].indices.end(), sets[j].indices.begin(),
                                  sets[j].indices.end(), std::back_inserter(common));
            rep.intersections[i][j] = rep.intersections[j][i] = common.size();
            if (i == j) continue;
            const std::size_t uni = sets[i].indices.size() + sets[j].indices.size() - common.size();
            rep.jaccard[i][j] = rep.jaccard[j][i] =
                uni ? static_cast<double>(common.size()) / static_cast<double>(uni) : 0.0;
        }
    }
    return rep;
}

nlohmann::json diversity_json(const std::vector<std::vector<double>>& cka, std::span<const CorrectSet> sets,
                              std::size_t n)
{
    using nlohmann::json;
    json out{
        {"cka_matrix", json::array()},       {"union_accuracy", 0.0}, {"per_model_accuracy", json::array()},
        {"model_ids", json::array()},        {"overlap_matrix", json::array()},
        {"exclusive_counts", json::array()}, {"all_correct", 0},      {"test_size", n},
    };
    for (const auto& row : cka) out["cka_matrix"].push_back(row);
    if (n > 0 && !sets.empty()) {
        out["union_accuracy"] = union_accuracy(sets, n);
        for (const auto& s : sets) {
            out["per_model_accuracy"].push_back(accuracy(s, n));
            out["model_ids"].push_back(s.model_id);
        }
    }
    if (sets.size() >= 2) {
        const OverlapReport rep = overlap_report(sets);
        for (const auto& row : rep.intersections) out["overlap_matrix"].push_back(row);
        out["exclusive_counts"] = rep.exclusive;
        out["all_correct"] = rep.all_correct;
    }
    return out;
}

}  // namespace ditmos::metrics
