#include <gtest/gtest.h>

#include <filesystem>

#include "ditmos/data/splitting.hpp"
#include "ditmos/model/architecture.hpp"
#include "ditmos/model/composite.hpp"
#include "ditmos/train/pipeline.hpp"
#include "ditmos/train/trainer.hpp"

namespace {

using namespace ditmos;
using model::CompositeModel;

data::Dataset tiny_data(std::uint64_t seed, std::size_t n = 160)
{
    data::SyntheticConfig g;
    g.num_classes = 4;
    g.clusters_per_class = 2;
    g.channels = 2;
    g.length = 32;
    g.n = n;
    g.families = 2;
    g.seed = seed;
    return data::gen_synthetic(g);
}

model::ArchitectureSpec tiny_arch(std::size_t m = 3)
{
    return model::ArchitectureSpec::with_filters(2, 32, 4, m, {4, 4, 2}, {6, 4, 2});
}

train::TrainConfig tiny_config()
{
    train::TrainConfig cfg;
    cfg.iterations = 2;
    cfg.epochs_per_phase = 1;
    cfg.pretrain_epochs = 2;
    cfg.baseline_epochs = 3;
    cfg.sgd.learning_rate = 0.05;
    cfg.seed = 3;
    return cfg;
}

data::Dataset with_round_robin_subsets(data::Dataset d, std::size_t m)
{
    d.subset_ids.resize(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) d.subset_ids[i] = static_cast<int>(i % m);
    return d;
}

CompositeModel pretrained(std::uint64_t seed, bool aggregation = true)
{
    const auto data = with_round_robin_subsets(tiny_data(seed), 3);
    auto c = model::build_composite(tiny_arch(), aggregation, seed);
    train::pretrain_classifiers(c, data, tiny_config(), seed);
    return c;
}

bool all_zero(const nn::Gradients& g)
{
    for (const auto& t : g) {
        for (nn::Scalar v : t.data()) {
            if (v != 0) return false;
        }
    }
    return true;
}

TEST(LearningRate, StepDecayDefaults)
{
    const nn::SgdState s;
    EXPECT_DOUBLE_EQ(s.rate_at(0), 0.001);
    EXPECT_DOUBLE_EQ(s.rate_at(4), 0.001);
    EXPECT_DOUBLE_EQ(s.rate_at(10), 0.00025);
    EXPECT_DOUBLE_EQ(s.rate_at(12), 0.001 * 0.5 * 0.5);
}

TEST(Adversarial, ZeroIterationsLeavesCompositeUnchanged)
{
    auto c = pretrained(1);
    const auto before = c;
    auto cfg = tiny_config();
    cfg.iterations = 0;
    const auto h = train::adversarial_train(c, tiny_data(1), cfg);
    EXPECT_EQ(c, before);
    EXPECT_TRUE(h.records.empty());
    EXPECT_EQ(h.iterations_run, 0u);
}

TEST(Adversarial, SelectorPhaseNeverTouchesClassifiers)
{
    const auto c = pretrained(2);
    const auto data = tiny_data(2);
    for (std::size_t i = 0; i < 10; ++i) {
        const auto g = train::sample_gradients(c, data.samples[i], data.labels[i], i % 3, train::Phase::Selector,
                                               train::LossCoefficients{});
        EXPECT_FALSE(all_zero(g.selector));
        for (const auto& cg : g.classifiers) EXPECT_TRUE(all_zero(cg));
    }
}

TEST(Adversarial, ClassifierPhaseNeverTouchesFrozenSelector)
{
    const auto c = pretrained(2);
    ASSERT_FALSE(c.train_taps);
    const auto data = tiny_data(2);
    for (std::size_t i = 0; i < 10; ++i) {
        const auto g = train::sample_gradients(c, data.samples[i], data.labels[i], i % 3, train::Phase::Classifier,
                                               train::LossCoefficients{});
        EXPECT_TRUE(all_zero(g.selector));
    }
}

TEST(Adversarial, ClassifiersBitIdenticalWhenCaseTermsVanish)
{
    auto c = pretrained(4);
    const auto before = c;
    auto cfg = tiny_config();
    cfg.coefficients = {0.0, 0.0, 0.0};
    train::adversarial_train(c, tiny_data(4), cfg);
    EXPECT_NE(c.selector, before.selector);
    EXPECT_EQ(c.classifiers, before.classifiers);
}

TEST(Adversarial, OnlyRoutedClassifierMovesWithoutUnionAndOverlap)
{
    const auto c = pretrained(5);
    const auto data = tiny_data(5);
    for (std::size_t i = 0; i < 30; ++i) {
        const std::size_t target = (i * 5) % 3;
        const auto g = train::sample_gradients(c, data.samples[i], data.labels[i], target, train::Phase::Classifier,
                                               train::LossCoefficients{0.1, 0.0, 0.0});
        for (std::size_t j = 0; j < 3; ++j) {
            if (j != target) {
                EXPECT_TRUE(all_zero(g.classifiers[j])) << "sample " << i << " classifier " << j;
            }
        }
        if (g.loss.kind != train::SampleCase::None) {
            EXPECT_FALSE(all_zero(g.classifiers[target]));
        }
    }
}

TEST(Adversarial, HistoryIsDeterministicAndBounded)
{
    auto a = pretrained(6);
    auto b = a;
    const auto data = tiny_data(6);
    const auto ha = train::adversarial_train(a, data, tiny_config());
    const auto hb = train::adversarial_train(b, data, tiny_config());
    EXPECT_EQ(a, b);
    ASSERT_EQ(ha.records.size(), 4u);
    for (std::size_t i = 0; i < ha.records.size(); ++i) {
        EXPECT_EQ(ha.records[i].to_json().dump(), hb.records[i].to_json().dump());
        EXPECT_LE(ha.records[i].overall, ha.records[i].union_accuracy);
        EXPECT_LE(ha.records[i].union_accuracy, 1.0);
        EXPECT_EQ(ha.records[i].phase, i % 2 == 0 ? "selector" : "classifier");
    }
}

TEST(Pretrain, SingleClassifierEqualsPlainTraining)
{
    const auto arch = tiny_arch(1);
    const auto data = tiny_data(8);
    auto subsets = with_round_robin_subsets(data, 1);
    const auto cfg = tiny_config();
    auto c = model::make_composite(nn::Model::initialized(arch.selector_spec(), 1), {model::build_weak(arch, 2)}, false);
    train::pretrain_classifiers(c, subsets, cfg, 11);
    auto plain = model::build_weak(arch, 2);
    train::train_model(plain, data, cfg, cfg.pretrain_epochs, 11);
    EXPECT_EQ(c.classifiers[0], plain);
}

TEST(Pretrain, EmptySubsetIsSkipped)
{
    auto data = with_round_robin_subsets(tiny_data(9), 2);
    auto c = model::build_composite(tiny_arch(), true, 9);
    const auto before = c;
    const auto skipped = train::pretrain_classifiers(c, data, tiny_config(), 9);
    EXPECT_EQ(skipped, std::vector<std::size_t>{2});
    EXPECT_EQ(c.classifiers[2], before.classifiers[2]);
    EXPECT_NE(c.classifiers[0], before.classifiers[0]);
    EXPECT_EQ(c.selector, before.selector);
}

/// Two generators with different template seeds play the role of the two
/// clusters; the subset id records which generator produced each sample.
TEST(Pretrain, ClassifiersSpecializeOnTheirOwnCluster)
{
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto a = tiny_data(100 + seed, 200);
        const auto b = tiny_data(200 + seed, 200);
        data::Dataset both = a;
        both.subset_ids.assign(a.size(), 0);
        for (std::size_t i = 0; i < b.size(); ++i) {
            both.samples.push_back(b.samples[i]);
            both.labels.push_back(b.labels[i]);
            both.subset_ids.push_back(1);
        }
        auto cfg = tiny_config();
        cfg.pretrain_epochs = 6;
        auto c = model::build_composite(tiny_arch(2), false, seed);
        train::pretrain_classifiers(c, both, cfg, seed);
        const double own0 = train::model_accuracy(c.classifiers[0], a);
        const double other0 = train::model_accuracy(c.classifiers[0], b);
        const double own1 = train::model_accuracy(c.classifiers[1], b);
        const double other1 = train::model_accuracy(c.classifiers[1], a);
        wins += (own0 > other0 && own1 > other1) ? 1 : 0;
    }
    EXPECT_GE(wins, 3);
}

TEST(RoutingLabels, EverySampleGetsOneValidIndex)
{
    const auto c = pretrained(10);
    const auto data = tiny_data(10);
    const auto labels = train::generate_routing_labels(c, data);
    ASSERT_EQ(labels.labels.size(), data.size());
    ASSERT_EQ(labels.provenance.size(), data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_LT(labels.labels[i], c.size());
        const auto taps = model::taps_from(c, model::run_selector(c, data.samples[i]));
        const auto routed = model::run_classifier(c, labels.labels[i], data.samples[i], taps, false).logits();
        const bool routed_correct = nn::argmax(routed.data()) == data.labels[i];
        EXPECT_EQ(routed_correct, labels.provenance[i] != train::Provenance::NoneLowestConfidence);
    }
}

TEST(Evaluate, MatchesIndependentLoop)
{
    const auto c = pretrained(12);
    const auto data = tiny_data(12, 80);
    const auto e = train::evaluate(c, data);
    std::size_t overall = 0, any = 0;
    std::vector<std::size_t> per(c.size(), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::size_t chosen = 0;
        const auto out = model::infer(c, data.samples[i], &chosen);
        overall += nn::argmax(out.classifier_logits.data()) == data.labels[i] ? 1 : 0;
        bool hit = false;
        for (std::size_t j = 0; j < c.size(); ++j) {
            const auto lj = model::forward_with_aggregation(c, data.samples[i], j).classifier_logits;
            if (nn::argmax(lj.data()) == data.labels[i]) {
                ++per[j];
                hit = true;
            }
        }
        any += hit ? 1 : 0;
    }
    const double n = static_cast<double>(data.size());
    EXPECT_DOUBLE_EQ(e.overall, static_cast<double>(overall) / n);
    EXPECT_DOUBLE_EQ(e.uni, static_cast<double>(any) / n);
    EXPECT_DOUBLE_EQ(e.selector, any ? static_cast<double>(overall) / static_cast<double>(any) : 0.0);
    for (std::size_t j = 0; j < c.size(); ++j) EXPECT_DOUBLE_EQ(e.per_classifier[j], static_cast<double>(per[j]) / n);
    EXPECT_LE(e.overall, e.uni);
}

TEST(Evaluate, SingleClassifierComposite)
{
    const auto arch = tiny_arch(1);
    const auto data = tiny_data(13, 80);
    auto weak = model::build_weak(arch, 3);
    train::train_model(weak, data, tiny_config(), 3, 3);
    const auto c = model::make_composite(nn::Model::initialized(arch.selector_spec(), 1), {weak}, false);
    const auto e = train::evaluate(c, data);
    EXPECT_DOUBLE_EQ(e.overall, train::model_accuracy(weak, data));
    EXPECT_DOUBLE_EQ(e.per_classifier[0], e.overall);
    if (e.overall > 0) {
        EXPECT_DOUBLE_EQ(e.selector, 1.0);
    }
}

TEST(Checkpoint, RoundTripKeepsModelAndConfig)
{
    const auto c = pretrained(14);
    auto cfg = tiny_config();
    cfg.coefficients.gamma = 0.07;
    cfg.no_aggregation = true;
    const auto path = std::filesystem::temp_directory_path() / "ditmos_checkpoint_test.dtmc";
    train::save_checkpoint(path, c, cfg, {{"stage", "unit"}});
    train::TrainConfig back_cfg;
    nlohmann::json meta;
    const auto back = train::load_checkpoint(path, &back_cfg, &meta);
    std::filesystem::remove(path);
    EXPECT_EQ(back, c);
    EXPECT_EQ(back_cfg, cfg);
    EXPECT_EQ(meta.at("stage"), "unit");
}

TEST(TrainConfigJson, RoundTripAndRejection)
{
    auto cfg = tiny_config();
    cfg.random_split = true;
    cfg.sgd.momentum = 0.5;
    EXPECT_EQ(train::train_config_from_json(train::to_json(cfg)), cfg);
    EXPECT_EQ(train::train_config_from_json(nlohmann::json::object()), train::TrainConfig{});
    EXPECT_THROW(train::train_config_from_json({{"no_such_field", 1}}), std::invalid_argument);
    auto bad = cfg;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    train::LossCoefficients neg{-0.1, 0.1, 0.03};
    EXPECT_THROW(neg.validate(), std::invalid_argument);
}

TEST(SeedPlan, FixedOffsets)
{
    const train::SeedPlan p{1000};
    EXPECT_EQ(p.data(), 1000u);
    EXPECT_EQ(p.strong(), 1202u);
    EXPECT_EQ(p.baseline(), 1707u);
}

TEST(Baseline, EnsembleOfIdenticalModelsEqualsSingleModel)
{
    const auto arch = tiny_arch();
    const auto data = tiny_data(15, 80);
    auto weak = model::build_weak(arch, 4);
    train::train_model(weak, data, tiny_config(), 2, 4);
    const std::vector<nn::Model> twins{weak, weak};
    for (std::size_t i = 0; i < data.size(); ++i) {
        EXPECT_EQ(train::ensemble_predict(twins, data.samples[i]),
                  nn::argmax(nn::forward(weak, data.samples[i], false).logits().data()));
    }
}

TEST(Baseline, EveryModeProducesConsistentResults)
{
    const auto arch = tiny_arch();
    const auto train_set = tiny_data(16, 120);
    const auto test_set = tiny_data(16, 40);
    for (const char* name : {"sigcla", "ensemble", "sync_moe", "naive_selector"}) {
        const auto mode = train::baseline_from_name(name);
        EXPECT_EQ(train::baseline_name(mode), name);
        const auto r = train::train_baseline(mode, arch, train_set, test_set, tiny_config(), 1);
        ASSERT_EQ(r.predictions.size(), test_set.size()) << name;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < test_set.size(); ++i) hits += r.predictions[i] == test_set.labels[i] ? 1 : 0;
        EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(hits) / static_cast<double>(test_set.size())) << name;
        EXPECT_GT(r.parameter_count, 0u);
        const auto again = train::train_baseline(mode, arch, train_set, test_set, tiny_config(), 1);
        EXPECT_EQ(again.predictions, r.predictions) << name;
    }
    EXPECT_THROW(train::baseline_from_name("moe"), std::invalid_argument);
    EXPECT_EQ(train::train_baseline(train::BaselineMode::SigCla, arch, train_set, test_set, tiny_config(), 1)
                  .parameter_count,
              model::build_sigcla(arch, 0).parameter_count());
}

TEST(Pipeline, RunDitmosIsDeterministicAndHonorsAblations)
{
    const auto arch = tiny_arch();
    const auto train_set = tiny_data(17, 120);
    const auto test_set = tiny_data(17, 40);
    auto cfg = tiny_config();
    cfg.random_split = true;
    const train::SeedPlan seeds{3};
    const auto a = train::run_ditmos(arch, nullptr, train_set, test_set, cfg, seeds);
    const auto b = train::run_ditmos(arch, nullptr, train_set, test_set, cfg, seeds);
    EXPECT_EQ(a.composite, b.composite);
    EXPECT_EQ(a.final.to_json(), b.final.to_json());
    EXPECT_TRUE(a.composite.aggregation_enabled);
    EXPECT_EQ(a.history.iterations_run, 2u);
    cfg.no_aggregation = true;
    const auto c = train::run_ditmos(arch, nullptr, train_set, test_set, cfg, seeds);
    EXPECT_FALSE(c.composite.aggregation_enabled);
    cfg.random_split = false;
    EXPECT_THROW(train::run_ditmos(arch, nullptr, train_set, test_set, cfg, seeds), std::invalid_argument);
}

}  // namespace
