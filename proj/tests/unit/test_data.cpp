#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "ditmos/data/dataset.hpp"
#include "ditmos/data/splitting.hpp"
#include "ditmos/model/architecture.hpp"
#include "support/oracles.hpp"

namespace {

using namespace ditmos;
using data::Dataset;
using data::FeatureMatrix;

std::filesystem::path temp_file(const std::string& name)
{
    return std::filesystem::temp_directory_path() / ("ditmos_test_" + name);
}

Dataset tiny_dataset(std::size_t n, std::size_t classes, std::uint64_t seed)
{
    data::SyntheticConfig cfg;
    cfg.num_classes = classes;
    cfg.clusters_per_class = 2;
    cfg.channels = 2;
    cfg.length = 16;
    cfg.n = n;
    cfg.seed = seed;
    return data::gen_synthetic(cfg);
}

TEST(Csv, ReadsWellFormedRows)
{
    const auto path = temp_file("two_rows.csv");
    {
        std::ofstream f(path);
        f << "# label then 2x3 values\n1,0.5,1,2,3,4,5\n\n0,-1,-2,-3,-4,-5,-6.25\n";
    }
    const auto ds = data::load_csv(path, 2, 3);
    std::filesystem::remove(path);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.labels, (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(ds.num_classes, 2u);
    EXPECT_FLOAT_EQ(ds.samples[1].at(1, 2), -6.25f);
}

TEST(Csv, WrongArityNamesTheLine)
{
    const auto path = temp_file("bad_row.csv");
    {
        std::ofstream f(path);
        f << "1,0,0,0,0\n0,1,2\n";
    }
    try {
        data::load_csv(path, 2, 2);
        FAIL() << "expected an error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
    std::filesystem::remove(path);
    EXPECT_THROW(data::load_csv(temp_file("missing.csv"), 2, 2), std::runtime_error);
}

TEST(Csv, RoundTripToFloatPrecision)
{
    const auto ds = tiny_dataset(40, 4, 3);
    const auto path = temp_file("roundtrip.csv");
    data::write_csv(path, ds);
    const auto back = data::load_csv(path, ds.channels, ds.length, ds.num_classes);
    std::filesystem::remove(path);
    ASSERT_EQ(back.size(), ds.size());
    EXPECT_EQ(back.labels, ds.labels);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.samples[i].size(); ++j) {
            EXPECT_FLOAT_EQ(static_cast<float>(back.samples[i][j]), static_cast<float>(ds.samples[i][j]));
        }
    }
}

TEST(BinaryDataset, RoundTripIsExact)
{
    auto ds = tiny_dataset(30, 3, 1);
    ds.subset_ids.assign(ds.size(), -1);
    ds.subset_ids[4] = 2;
    const auto bytes = data::serialize_dataset(ds);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DTMD");
    EXPECT_EQ(data::deserialize_dataset(bytes), ds);
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(data::deserialize_dataset(cut), std::runtime_error);
}

TEST(Synthetic, ZeroNoiseRepeatsTemplates)
{
    data::SyntheticConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.n = 400;
    const auto ds = data::gen_synthetic(cfg);
    std::vector<std::set<std::vector<nn::Scalar>>> distinct(cfg.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        distinct[ds.labels[i]].insert({ds.samples[i].data().begin(), ds.samples[i].data().end()});
    }
    for (const auto& d : distinct) {
        EXPECT_GE(d.size(), 1u);
        EXPECT_LE(d.size(), cfg.clusters_per_class);
    }
}

TEST(Synthetic, SeededAndBalanced)
{
    data::SyntheticConfig cfg;
    cfg.n = 1001;
    const auto a = data::gen_synthetic(cfg);
    EXPECT_EQ(a, data::gen_synthetic(cfg));
    cfg.seed += 1;
    EXPECT_NE(a, data::gen_synthetic(cfg));
    for (std::size_t c : a.class_counts()) {
        EXPECT_LE(std::abs(static_cast<long>(c) - static_cast<long>(1001 / 8)), 1);
    }
    EXPECT_NO_THROW(a.validate());
    for (const auto& s : a.samples) EXPECT_TRUE(s.all_finite());
}

TEST(Synthetic, RejectsNonPositiveParameters)
{
    data::SyntheticConfig cfg;
    cfg.n = 0;
    EXPECT_THROW(data::gen_synthetic(cfg), std::invalid_argument);
    cfg.n = 10;
    cfg.noise_sigma = -1;
    EXPECT_THROW(data::gen_synthetic(cfg), std::invalid_argument);
}

TEST(Split, EightyTwenty)
{
    const auto ds = tiny_dataset(100, 4, 2);
    const auto [train, test] = data::split_train_test(ds, 0.8, 5);
    EXPECT_EQ(train.size(), 80u);
    EXPECT_EQ(test.size(), 20u);
    std::multiset<std::vector<nn::Scalar>> all;
    std::multiset<std::vector<nn::Scalar>> parts;
    for (const auto& s : ds.samples) all.insert({s.data().begin(), s.data().end()});
    for (const auto* part : {&train, &test}) {
        for (const auto& s : part->samples) parts.insert({s.data().begin(), s.data().end()});
    }
    EXPECT_EQ(all, parts);
    const auto again = data::split_train_test(ds, 0.8, 5);
    EXPECT_EQ(again.first, train);
}

TEST(Split, TwoSampleClassHalves)
{
    Dataset ds{1, 1, 2, {}, {}, {}};
    for (std::size_t i = 0; i < 4; ++i) {
        ds.samples.emplace_back(nn::Shape{1, 1}, static_cast<nn::Scalar>(i));
        ds.labels.push_back(i % 2);
    }
    const auto [train, test] = data::split_train_test(ds, 0.5, 1);
    EXPECT_EQ(train.size(), 2u);
    EXPECT_EQ(test.size(), 2u);
    EXPECT_EQ(train.class_counts(), (std::vector<std::size_t>{1, 1}));
    ds.labels[3] = 0;
    EXPECT_THROW(data::split_train_test(ds, 0.5, 1), std::invalid_argument);
    EXPECT_THROW(data::split_train_test(ds, 1.0, 1), std::invalid_argument);
}

TEST(Features, ShapeIdenticalRowsAndOracle)
{
    const auto arch = model::ArchitectureSpec::defaults(3, 128, 8, 6);
    const auto strong = model::build_strong(arch, 3);
    data::SyntheticConfig cfg;
    cfg.n = 6;
    auto ds = data::gen_synthetic(cfg);
    ds.samples[5] = ds.samples[0];
    const auto f = data::extract_features(strong, ds);
    EXPECT_EQ(f.rows, 6u);
    EXPECT_EQ(f.cols, 16u * 2u);
    for (std::size_t c = 0; c < f.cols; ++c) EXPECT_EQ(f.at(0, c), f.at(5, c));
    const std::size_t layer = model::strong_feature_layer(strong);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        nn::Tensor cur = ds.samples[r];
        for (std::size_t i = 0; i <= layer; ++i) cur = nn::forward_layer(strong, i, cur);
        for (std::size_t c = 0; c < f.cols; ++c) EXPECT_EQ(f.at(r, c), static_cast<double>(cur[c]));
    }
    Dataset wrong = ds;
    wrong.length = 64;
    for (auto& s : wrong.samples) s = nn::Tensor({3, 64});
    EXPECT_THROW(data::extract_features(strong, wrong), std::invalid_argument);
}

using testsupport::random_matrix;

TEST(KMeans, SingleClusterIsTheMean)
{
    std::mt19937_64 rng(1);
    const auto f = random_matrix(30, 4, rng);
    const auto r = data::kmeans(f, 1, 3);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < 30; ++i) mean += f.at(i, c);
        EXPECT_NEAR(r.centroids[c], mean / 30, 1e-12);
    }
    for (std::size_t a : r.assignments) EXPECT_EQ(a, 0u);
}

TEST(KMeans, SeparatesFarBlobs)
{
    std::mt19937_64 rng(2);
    auto f = random_matrix(40, 3, rng);
    for (std::size_t i = 20; i < 40; ++i) {
        for (std::size_t c = 0; c < 3; ++c) f.at(i, c) += 100.0;
    }
    const auto r = data::kmeans(f, 2, 4);
    for (std::size_t i = 1; i < 20; ++i) EXPECT_EQ(r.assignments[i], r.assignments[0]);
    for (std::size_t i = 21; i < 40; ++i) EXPECT_EQ(r.assignments[i], r.assignments[20]);
    EXPECT_NE(r.assignments[0], r.assignments[20]);
}

TEST(KMeans, MatchesBruteForceOracleOnRandomData)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        const std::size_t rows = 5 + seed % 40;
        const std::size_t cols = 1 + seed % 5;
        const std::size_t k = 1 + seed % std::min<std::size_t>(rows, 6);
        const auto f = random_matrix(rows, cols, rng);
        const auto r = data::kmeans(f, k, seed);
        ASSERT_EQ(r.assignments.size(), rows);
        const auto check = testsupport::kmeans_oracle(f, r, k);
        EXPECT_EQ(check.wrong_assignments, 0u) << "seed " << seed;
        const double inertia = check.inertia;
        EXPECT_NEAR(r.inertia, inertia, 1e-9 * std::max(1.0, inertia));
        for (std::size_t t = 1; t < r.inertia_history.size(); ++t) {
            EXPECT_LE(r.inertia_history[t], r.inertia_history[t - 1] * (1 + 1e-12) + 1e-12);
        }
        EXPECT_EQ(data::kmeans(f, k, seed).assignments, r.assignments);
    }
}

TEST(KMeans, RejectsTooManyClusters)
{
    std::mt19937_64 rng(3);
    EXPECT_THROW(data::kmeans(random_matrix(3, 2, rng), 4, 1), std::invalid_argument);
}

TEST(KMeans, RepairsEmptyClusters)
{
    FeatureMatrix f{6, 1, {0, 0, 0, 0, 0, 10}};
    const auto r = data::kmeans(f, 3, 1);
    std::set<std::size_t> used(r.assignments.begin(), r.assignments.end());
    EXPECT_GE(used.size(), 2u);
    for (std::size_t a : r.assignments) EXPECT_LT(a, 3u);
}

TEST(Subsets, PartitionProperties)
{
    const auto ds = tiny_dataset(50, 5, 4);
    const auto zeros = data::make_subsets(ds, std::vector<std::size_t>(50, 0), 3);
    EXPECT_EQ(data::subset_sizes(zeros, 3), (std::vector<std::size_t>{50, 0, 0}));

    const auto ids = data::random_assignments(50, 3, 9);
    const auto sub = data::make_subsets(ds, ids, 3);
    const auto sizes = data::subset_sizes(sub, 3);
    EXPECT_EQ(sizes[0] + sizes[1] + sizes[2], 50u);
    std::vector<std::size_t> relabeled(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) relabeled[i] = (ids[i] + 1) % 3;
    const auto perm = data::make_subsets(ds, relabeled, 3);
    EXPECT_EQ(perm.members_of(1), sub.members_of(0));
    EXPECT_EQ(perm.members_of(0), sub.members_of(2));
    EXPECT_THROW(data::make_subsets(ds, std::vector<std::size_t>(50, 3), 3), std::invalid_argument);
    EXPECT_THROW(data::make_subsets(ds, std::vector<std::size_t>(49, 0), 3), std::invalid_argument);
}

TEST(Subsets, RandomSizesStayWithinBinomialNoise)
{
    const std::size_t n = 6000;
    const std::size_t m = 6;
    const auto ids = data::random_assignments(n, m, 17);
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t a : ids) ++counts[a];
    const double mean = static_cast<double>(n) / m;
    const double sd = std::sqrt(n * (1.0 / m) * (1 - 1.0 / m));
    for (std::size_t c : counts) EXPECT_LT(std::abs(static_cast<double>(c) - mean), 5 * sd);
    EXPECT_EQ(ids, data::random_assignments(n, m, 17));
}

TEST(Subsets, AssignmentCsvRoundTrip)
{
    const auto ids = data::random_assignments(25, 4, 1);
    const auto path = temp_file("assign.csv");
    data::write_assignments_csv(path, ids);
    EXPECT_EQ(data::read_assignments_csv(path), ids);
    std::filesystem::remove(path);
}

TEST(Standardize, ZeroMeanUnitVariance)
{
    std::mt19937_64 rng(4);
    auto f = random_matrix(20, 3, rng);
    for (std::size_t i = 0; i < 20; ++i) f.at(i, 2) = 5.0;
    const auto s = data::standardize(f);
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < 20; ++i) mean += s.at(i, c);
        mean /= 20;
        for (std::size_t i = 0; i < 20; ++i) var += (s.at(i, c) - mean) * (s.at(i, c) - mean);
        EXPECT_NEAR(mean, 0, 1e-12);
        EXPECT_NEAR(var / 20, 1, 1e-9);
    }
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(s.at(i, 2), 0.0);
}

}  // namespace
