#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ditmos/nn/loss.hpp"
#include "ditmos/train/objective.hpp"
#include "support/oracles.hpp"

namespace {

using namespace ditmos;
using nn::Scalar;
using nn::Tensor;
using train::LossCoefficients;
using train::Provenance;

TEST(RoutingLabel, SingleCorrect)
{
    Provenance p;
    const std::vector<double> conf{0.2, 0.7, 0.1};
    EXPECT_EQ(train::routing_label_for({false, true, false}, conf, &p), 1u);
    EXPECT_EQ(p, Provenance::Single);
}

TEST(RoutingLabel, MultiCorrectTakesHighestConfidence)
{
    Provenance p;
    const std::vector<double> conf{0.9, 0.3, 0.6, 0.2, 0.1};
    EXPECT_EQ(train::routing_label_for({true, false, true, false, false}, conf, &p), 0u);
    EXPECT_EQ(p, Provenance::MultiHighestConfidence);
}

TEST(RoutingLabel, NoneCorrectTakesLowestConfidence)
{
    Provenance p;
    const std::vector<double> conf{0.5, 0.2, 0.4};
    EXPECT_EQ(train::routing_label_for({false, false, false}, conf, &p), 1u);
    EXPECT_EQ(p, Provenance::NoneLowestConfidence);
    EXPECT_EQ(train::provenance_name(p), "none");
}

TEST(RoutingLabel, TiesGoToLowestIndex)
{
    const std::vector<double> conf{0.4, 0.4, 0.4};
    EXPECT_EQ(train::routing_label_for({false, true, true}, conf), 1u);
    EXPECT_EQ(train::routing_label_for({false, false, false}, conf), 0u);
    EXPECT_THROW(train::routing_label_for({true}, conf), std::invalid_argument);
}

Tensor logits_of(std::vector<Scalar> v)
{
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

TEST(CompositeLoss, AllSingleCorrectHasNoUnionOrOverlap)
{
    const LossCoefficients c;
    const Tensor sel = logits_of({0.3f, -0.2f, 0.1f});
    const std::vector<Tensor> cls{logits_of({2, 0, 0}), logits_of({0, 2, 0}), logits_of({0, 0, 2})};
    double sum_total = 0, sum_sel = 0, sum_single = 0;
    for (std::size_t y = 0; y < 3; ++y) {
        const auto r = train::composite_loss(sel, cls, y, y, c);
        EXPECT_EQ(r.kind, train::SampleCase::Single);
        EXPECT_EQ(r.uni, 0.0);
        EXPECT_EQ(r.overlap, 0.0);
        sum_total += r.total;
        sum_sel += r.selector;
        sum_single += r.single;
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(r.classifier_grads[j].empty(), j != y);
    }
    EXPECT_NEAR(sum_total / 3, sum_sel / 3 + c.alpha * sum_single / 3, 1e-12);
}

TEST(CompositeLoss, ZeroCoefficientsLeaveSelectorCrossEntropy)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int t = 0; t < 50; ++t) {
        Tensor sel({4});
        std::vector<Tensor> cls(4, Tensor({5}));
        for (auto& v : sel.data()) v = static_cast<Scalar>(n(rng));
        for (auto& l : cls) {
            for (auto& v : l.data()) v = static_cast<Scalar>(n(rng));
        }
        const auto r = train::composite_loss(sel, cls, static_cast<std::size_t>(t % 5), static_cast<std::size_t>(t % 4),
                                             LossCoefficients{0, 0, 0});
        EXPECT_EQ(r.total, r.selector);
        for (const auto& g : r.classifier_grads) {
            for (Scalar v : g.data()) EXPECT_EQ(v, 0);
        }
    }
}

using testsupport::composite_loss_oracle;
using testsupport::cross_entropy_ld;

TEST(CompositeLoss, MatchesFloat64OracleOnRandomBatches)
{
    const LossCoefficients c{0.1, 0.1, 0.03};
    std::size_t kinds[3] = {0, 0, 0};
    for (std::uint64_t seed = 0; seed < 150; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 1.5);
        const std::size_t m = 2 + seed % 5;
        const std::size_t classes = 2 + seed % 3;
        double batch = 0;
        long double batch_oracle = 0;
        for (std::size_t b = 0; b < 8; ++b) {
            Tensor sel({m});
            for (auto& v : sel.data()) v = static_cast<Scalar>(n(rng));
            std::vector<Tensor> cls(m, Tensor({classes}));
            for (auto& l : cls) {
                for (auto& v : l.data()) v = static_cast<Scalar>(n(rng));
            }
            const std::size_t y = (seed + b) % classes;
            const std::size_t route = (seed * 7 + b) % m;
            const auto r = train::composite_loss(sel, cls, y, route, c);
            const auto o = composite_loss_oracle(sel, cls, y, route, c);
            ++kinds[static_cast<int>(r.kind)];
            auto close = [](double a, long double b) {
                return std::abs(a - static_cast<double>(b)) <= 1e-5 * std::max(1.0, std::abs(static_cast<double>(b)));
            };
            EXPECT_TRUE(close(r.selector, o.sel)) << r.selector << " vs " << static_cast<double>(o.sel);
            EXPECT_TRUE(close(r.single, o.single));
            EXPECT_TRUE(close(r.uni, o.uni));
            EXPECT_TRUE(close(r.overlap, o.overlap));
            EXPECT_TRUE(close(r.total, o.total));
            batch += r.total;
            batch_oracle += o.total;
        }
        EXPECT_NEAR(batch / 8, static_cast<double>(batch_oracle / 8), 1e-5 * std::max(1.0, batch / 8));
    }
    EXPECT_GT(kinds[0], 0u);
    EXPECT_GT(kinds[1], 0u);
    EXPECT_GT(kinds[2], 0u);
}

TEST(CompositeLoss, GradientsAreScaledCrossEntropyGradients)
{
    const LossCoefficients c{0.5, 0.25, 0.125};
    // Classifiers 0 and 2 are correct for class 1; classifier 2 is more
    // confident, so 0 is repelled.
    const Tensor sel = logits_of({0, 0, 0});
    const std::vector<Tensor> cls{logits_of({0, 1, 0}), logits_of({2, 0, 0}), logits_of({0, 3, 0})};
    const auto r = train::composite_loss(sel, cls, 1, 2, c);
    EXPECT_EQ(r.kind, train::SampleCase::Multi);
    const auto ce0 = nn::cross_entropy(cls[0].data(), 1);
    const auto ce2 = nn::cross_entropy(cls[2].data(), 1);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_FLOAT_EQ(r.classifier_grads[0][k], -0.125f * ce0.grad[k]);
        EXPECT_FLOAT_EQ(r.classifier_grads[2][k], 0.5f * ce2.grad[k]);
    }
    EXPECT_TRUE(r.classifier_grads[1].empty());
    EXPECT_NEAR(r.overlap, -ce0.loss, 1e-12);
}

TEST(CompositeLoss, NoneCorrectTouchesEveryClassifier)
{
    const Tensor sel = logits_of({1, 0});
    const std::vector<Tensor> cls{logits_of({3, 0}), logits_of({2, 1})};
    const auto r = train::composite_loss(sel, cls, 1, 0, LossCoefficients{});
    EXPECT_EQ(r.kind, train::SampleCase::None);
    EXPECT_NEAR(r.uni, nn::cross_entropy(cls[0].data(), 1).loss + nn::cross_entropy(cls[1].data(), 1).loss, 1e-12);
    EXPECT_EQ(r.single, 0.0);
    EXPECT_FALSE(r.classifier_grads[0].empty());
    EXPECT_FALSE(r.classifier_grads[1].empty());
}

TEST(CompositeLoss, RejectsShapeMismatch)
{
    const std::vector<Tensor> cls{logits_of({1, 0}), logits_of({0, 1})};
    EXPECT_THROW(train::composite_loss(logits_of({1, 0, 0}), cls, 0, 0, {}), std::invalid_argument);
    EXPECT_THROW(train::composite_loss(logits_of({1, 0}), cls, 0, 2, {}), std::out_of_range);
}

TEST(MixtureLoss, ValueAndGradientAgainstLongDouble)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 2.0);
        const std::size_t m = 2 + seed % 4;
        Tensor sel({m});
        for (auto& v : sel.data()) v = static_cast<Scalar>(n(rng));
        std::vector<Tensor> cls(m, Tensor({3}));
        for (auto& l : cls) {
            for (auto& v : l.data()) v = static_cast<Scalar>(n(rng));
        }
        const std::size_t y = seed % 3;
        auto value = [&](const Tensor& s, const std::vector<Tensor>& c) {
            long double mx = s[0];
            for (Scalar v : s.data()) mx = std::max<long double>(mx, v);
            long double z = 0;
            for (Scalar v : s.data()) z += std::exp(static_cast<long double>(v) - mx);
            long double p = 0;
            for (std::size_t j = 0; j < m; ++j) p += std::exp(static_cast<long double>(s[j]) - mx) / z * std::exp(-cross_entropy_ld(c[j], y));
            return -std::log(p);
        };
        const auto r = train::mixture_loss(sel, cls, y);
        const long double expect = value(sel, cls);
        EXPECT_NEAR(r.loss, static_cast<double>(expect), 1e-5 * std::max(1.0, static_cast<double>(expect)));
        const long double h = 1e-3;
        for (std::size_t j = 0; j < m; ++j) {
            Tensor up = sel, down = sel;
            up[j] += static_cast<Scalar>(h);
            down[j] -= static_cast<Scalar>(h);
            const double fd = static_cast<double>((value(up, cls) - value(down, cls)) / (static_cast<long double>(up[j]) - down[j]));
            EXPECT_NEAR(r.selector_grad[j], fd, 1e-3);
        }
    }
}

}  // namespace
