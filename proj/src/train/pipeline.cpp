#include "ditmos/train/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "ditmos/metrics/diversity.hpp"
#include "ditmos/nn/loss.hpp"
#include "ditmos/nn/sgd.hpp"

namespace ditmos::train {

std::string_view baseline_name(BaselineMode mode)
{
    switch (mode) {
    case BaselineMode::SigCla: return "sigcla";
    case BaselineMode::Ensemble: return "ensemble";
    case BaselineMode::SyncMoe: return "sync_moe";
    case BaselineMode::NaiveSelector: return "naive_selector";
    }
    return "?";
}

BaselineMode baseline_from_name(std::string_view name)
{
    for (auto mode : {BaselineMode::SigCla, BaselineMode::Ensemble, BaselineMode::SyncMoe, BaselineMode::NaiveSelector}) {
        if (baseline_name(mode) == name) return mode;
    }
    throw std::invalid_argument("unknown baseline mode '" + std::string(name) +
                                "' (expected sigcla, ensemble, sync_moe or naive_selector)");
}

nlohmann::json BaselineResult::to_json() const
{
    return {{"mode", baseline_name(mode)}, {"accuracy", accuracy}, {"parameter_count", parameter_count}};
}

std::size_t ensemble_predict(std::span<const nn::Model> members, const nn::Tensor& input)
{
    if (members.empty()) throw std::invalid_argument("ensemble needs at least one member");
    std::vector<double> mean;
    for (const auto& m : members) {
        const auto p = nn::softmax(nn::forward(m, input, false).logits().data());
        if (mean.empty()) mean.assign(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) mean[i] += static_cast<double>(p[i]);
    }
    return static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
}

namespace {

double accuracy_of(const std::vector<std::size_t>& predictions, const data::Dataset& test)
{
    if (test.size() == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.size(); ++i) hit += predictions[i] == test.labels[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(test.size());
}

void train_selector_bce(nn::Model& selector, const data::Dataset& train,
                        const std::vector<std::vector<nn::Scalar>>& targets, const TrainConfig& cfg,
                        std::size_t epochs, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    nn::Gradients grads = selector.zero_gradients();
    nn::MomentumSgd opt(selector, cfg.sgd.momentum);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double rate = cfg.sgd.rate_at(epoch);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            for (auto& g : grads) g.fill(0);
            for (std::size_t b = start; b < stop; ++b) {
                const auto tape = nn::forward(selector, train.samples[order[b]], true);
                const auto bce = nn::binary_cross_entropy(tape.logits().data(), targets[order[b]]);
                nn::backward_accumulate(selector, tape, bce.grad, grads);
            }
            nn::scale_gradients(grads, static_cast<nn::Scalar>(1.0 / static_cast<double>(stop - start)));
            opt.apply(selector, grads, rate);
        }
    }
}

}  // namespace

BaselineResult train_baseline(BaselineMode mode, const model::ArchitectureSpec& arch, const data::Dataset& train,
                              const data::Dataset& test, const TrainConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    const std::size_t epochs = cfg.resolved_baseline_epochs();
    BaselineResult r;
    r.mode = mode;
    switch (mode) {
    case BaselineMode::SigCla: {
        nn::Model net = model::build_sigcla(arch, seed);
        train_model(net, train, cfg, epochs, seed + 1);
        r.predictions = metrics::predict(net, test);
        r.parameter_count = net.parameter_count();
        r.models.push_back(std::move(net));
        break;
    }
    case BaselineMode::Ensemble: {
        for (std::uint64_t k = 0; k < 2; ++k) {
            nn::Model net = model::build_weak(arch, seed + k);
            train_model(net, train, cfg, epochs, seed + 100 + k);
            r.parameter_count += net.parameter_count();
            r.models.push_back(std::move(net));
        }
        for (const auto& s : test.samples) r.predictions.push_back(ensemble_predict(r.models, s));
        break;
    }
    case BaselineMode::SyncMoe: {
        model::CompositeModel composite = model::build_composite(arch, false, seed);
        TrainConfig joint = cfg;
        joint.seed = seed + 1;
        joint_train(composite, train, joint, epochs);
        r.predictions = metrics::predict(composite, test);
        r.parameter_count = composite.selector.parameter_count();
        for (const auto& c : composite.classifiers) r.parameter_count += c.parameter_count();
        r.composite = std::move(composite);
        break;
    }
    case BaselineMode::NaiveSelector: {
        const std::size_t m = arch.num_classifiers;
        std::vector<nn::Model> classifiers;
        for (std::size_t j = 0; j < m; ++j) {
            nn::Model net = model::build_weak(arch, seed + j);
            train_model(net, train, cfg, cfg.pretrain_epochs, seed + 100 + j);
            classifiers.push_back(std::move(net));
        }
        std::vector<std::vector<nn::Scalar>> targets(train.size(), std::vector<nn::Scalar>(m, 0));
        for (std::size_t j = 0; j < m; ++j) {
            const auto pred = metrics::predict(classifiers[j], train);
            for (std::size_t i = 0; i < train.size(); ++i) targets[i][j] = pred[i] == train.labels[i] ? 1 : 0;
        }
        nn::Model selector = nn::Model::initialized(arch.selector_spec(), seed + model::kSelectorSeedOffset);
        const std::size_t selector_epochs = std::max<std::size_t>(1, epochs - cfg.pretrain_epochs);
        train_selector_bce(selector, train, targets, cfg, selector_epochs, seed + 200);
        r.models = classifiers;
        model::CompositeModel composite = model::make_composite(std::move(selector), std::move(classifiers), false);
        r.predictions = metrics::predict(composite, test);
        r.parameter_count = composite.selector.parameter_count();
        for (const auto& c : composite.classifiers) r.parameter_count += c.parameter_count();
        r.composite = std::move(composite);
        break;
    }
    }
    r.accuracy = accuracy_of(r.predictions, test);
    return r;
}

SplitResult split_training_data(const nn::Model* strong, const data::Dataset& train, std::size_t m, bool random,
                                std::uint64_t seed)
{
    if (m == 0) throw std::invalid_argument("split needs m >= 1");
    SplitResult out;
    if (random) {
        out.assignments = data::random_assignments(train.size(), m, seed);
    } else {
        if (!strong) throw std::invalid_argument("K-Means splitting needs a trained strong model");
        const auto features = data::extract_features(*strong, train);
        out.assignments = data::kmeans(features, m, seed).assignments;
    }
    out.subsets = data::make_subsets(train, out.assignments, m);
    out.sizes = data::subset_sizes(out.subsets, m);
    return out;
}

DitmosRun run_ditmos(const model::ArchitectureSpec& arch, const nn::Model* strong, const data::Dataset& train,
                     const data::Dataset& test, const TrainConfig& cfg, const SeedPlan& seeds)
{
    cfg.validate();
    DitmosRun run;
    run.split = split_training_data(strong, train, arch.num_classifiers, cfg.random_split, seeds.clustering());
    run.composite = model::build_composite(arch, !cfg.no_aggregation, seeds.composite());
    pretrain_classifiers(run.composite, run.split.subsets, cfg, seeds.pretrain());
    run.pretrained = evaluate(run.composite, test);
    TrainConfig loop = cfg;
    loop.seed = seeds.adversarial();
    if (cfg.synchronous) {
        run.history = joint_train(run.composite, train, loop, cfg.iterations * cfg.epochs_per_phase);
    } else {
        run.history = adversarial_train(run.composite, train, loop);
    }
    run.final = evaluate(run.composite, test);
    return run;
}

}  // namespace ditmos::train
