#include "ditmos/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ditmos/nn/loss.hpp"
#include "ditmos/nn/sgd.hpp"

namespace ditmos::train {

using model::CompositeModel;
using nn::Tensor;

namespace {

std::vector<std::size_t> iota_indices(std::size_t n)
{
    std::vector<std::size_t> out(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
}

void scale_all(nn::Gradients& grads, std::size_t count)
{
    if (count > 1) nn::scale_gradients(grads, static_cast<nn::Scalar>(1.0 / static_cast<double>(count)));
}

void zero_all(nn::Gradients& grads)
{
    for (auto& g : grads) g.fill(0);
}

// Cross-entropy training over `indices` of `data` with fixed side inputs.
std::vector<EpochStats> train_indices(nn::Model& model, const data::Dataset& data, std::vector<std::size_t> indices,
                                      const TrainConfig& cfg, std::size_t epochs, std::mt19937_64& rng,
                                      std::span<const Tensor> side)
{
    std::vector<EpochStats> stats;
    nn::Gradients grads = model.zero_gradients();
    nn::MomentumSgd opt(model, cfg.sgd.momentum);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(indices.begin(), indices.end(), rng);
        const double rate = cfg.sgd.rate_at(epoch);
        double loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < indices.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(indices.size(), start + cfg.batch_size);
            zero_all(grads);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = indices[b];
                const auto tape = nn::forward(model, data.samples[idx], true, side);
                const auto ce = nn::cross_entropy(tape.logits().data(), data.labels[idx]);
                loss += ce.loss;
                correct += nn::argmax(tape.logits().data()) == data.labels[idx] ? 1 : 0;
                nn::backward_accumulate(model, tape, ce.grad, grads);
            }
            scale_all(grads, stop - start);
            opt.apply(model, grads, rate);
        }
        const auto n = static_cast<double>(std::max<std::size_t>(indices.size(), 1));
        stats.push_back({epoch, loss / n, static_cast<double>(correct) / n});
    }
    return stats;
}

// Classifier outputs for one sample under the current selector.
struct SampleOutcome {
    std::size_t chosen = 0;
    std::vector<bool> correct;
    std::vector<double> confidence;
};

SampleOutcome outcome(const CompositeModel& composite, const Tensor& input, std::size_t label)
{
    SampleOutcome out;
    const auto sel = nn::forward(composite.selector, input, composite.aggregation_enabled);
    out.chosen = nn::argmax(sel.logits().data());
    const auto taps = model::taps_from(composite, sel);
    out.correct.resize(composite.size());
    out.confidence.resize(composite.size());
    for (std::size_t j = 0; j < composite.size(); ++j) {
        const auto cls = model::run_classifier(composite, j, input, taps, false);
        const auto probs = nn::softmax(cls.logits().data());
        out.correct[j] = nn::argmax(cls.logits().data()) == label;
        out.confidence[j] = static_cast<double>(probs[label]);
    }
    return out;
}

inline constexpr std::size_t kSelectorChoice = std::numeric_limits<std::size_t>::max();

// Adds one sample's gradients into `sel` / `cls`.
CompositeLoss accumulate_sample(const CompositeModel& composite, const Tensor& input, std::size_t true_class,
                                std::size_t routing, Phase phase, const LossCoefficients& coefficients,
                                nn::Gradients& sel, std::vector<nn::Gradients>& cls)
{
    const bool need_taps = composite.aggregation_enabled;
    const auto sel_tape = nn::forward(composite.selector, input, phase == Phase::Selector || need_taps);
    if (phase == Phase::Selector) {
        auto ce = nn::cross_entropy(sel_tape.logits().data(), routing);
        nn::backward_accumulate(composite.selector, sel_tape, ce.grad, sel);
        CompositeLoss loss;
        loss.selector = ce.loss;
        loss.total = ce.loss;
        loss.selector_grad = std::move(ce.grad);
        return loss;
    }
    const auto taps = model::taps_from(composite, sel_tape);
    const std::size_t target = routing == kSelectorChoice ? nn::argmax(sel_tape.logits().data()) : routing;
    std::vector<nn::ActivationTape> tapes;
    std::vector<Tensor> logits;
    tapes.reserve(composite.size());
    for (std::size_t j = 0; j < composite.size(); ++j) {
        tapes.push_back(model::run_classifier(composite, j, input, taps, true));
        logits.push_back(tapes.back().logits());
    }
    CompositeLoss loss = composite_loss(sel_tape.logits(), logits, true_class, target, coefficients);

    const bool through_taps = composite.train_taps && need_taps;
    std::vector<Tensor> tap_grads;
    for (const auto& t : taps) tap_grads.emplace_back(t.shape());
    for (std::size_t j = 0; j < composite.size(); ++j) {
        if (loss.classifier_grads[j].size() == 0) continue;
        std::vector<Tensor> side;
        nn::BackwardExtras extras;
        if (through_taps) extras.side_grads = &side;
        nn::backward_accumulate(composite.classifiers[j], tapes[j], loss.classifier_grads[j], cls[j], extras);
        if (through_taps) {
            for (std::size_t k = 0; k < side.size(); ++k) {
                for (std::size_t i = 0; i < side[k].size(); ++i) tap_grads[k][i] += side[k][i];
            }
        }
    }
    if (through_taps) {
        std::vector<nn::InjectedGrad> injected;
        for (std::size_t k = 0; k < tap_grads.size(); ++k) {
            injected.push_back({composite.tap_layers[k], std::move(tap_grads[k])});
        }
        nn::BackwardExtras extras;
        extras.injected = injected;
        nn::backward_accumulate(composite.selector, sel_tape, Tensor(sel_tape.logits().shape()), sel, extras);
    }
    return loss;
}

void record_eval(PhaseRecord& rec, const CompositeModel& composite, const data::Dataset& eval_set)
{
    const EvalResult e = evaluate(composite, eval_set);
    rec.overall = e.overall;
    rec.selector_accuracy = e.selector;
    rec.union_accuracy = e.uni;
}

}  // namespace

std::vector<EpochStats> train_model(nn::Model& model, const data::Dataset& data, const TrainConfig& cfg,
                                    std::size_t epochs, std::uint64_t seed)
{
    cfg.validate();
    if (data.sample_shape() != model.input_shape()) {
        throw std::invalid_argument("dataset samples " + nn::shape_string(data.sample_shape()) +
                                    " do not match model input " + nn::shape_string(model.input_shape()));
    }
    std::mt19937_64 rng(seed);
    return train_indices(model, data, iota_indices(data.size()), cfg, epochs, rng, {});
}

double model_accuracy(const nn::Model& model, const data::Dataset& data)
{
    if (data.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        correct += nn::argmax(nn::forward(model, data.samples[i], false).logits().data()) == data.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<std::size_t> pretrain_classifiers(CompositeModel& composite, const data::Dataset& subsets,
                                              const TrainConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    if (subsets.subset_ids.size() != subsets.size()) throw std::invalid_argument("training data has no subset ids");
    const auto taps = model::zero_taps(composite);
    std::vector<std::size_t> skipped;
    for (std::size_t i = 0; i < composite.size(); ++i) {
        const auto members = subsets.members_of(static_cast<int>(i));
        if (members.empty()) {
            std::cerr << "warning: subset " << i << " is empty; classifier " << i << " keeps its initial weights\n";
            skipped.push_back(i);
            continue;
        }
        std::mt19937_64 rng(seed + i);
        train_indices(composite.classifiers[i], subsets, members, cfg, cfg.pretrain_epochs, rng, taps);
    }
    return skipped;
}

RoutingLabels generate_routing_labels(const CompositeModel& composite, const data::Dataset& data)
{
    RoutingLabels out;
    out.labels.resize(data.size());
    out.provenance.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SampleOutcome o = outcome(composite, data.samples[i], data.labels[i]);
        out.labels[i] = routing_label_for(o.correct, o.confidence, &out.provenance[i]);
    }
    return out;
}

nlohmann::json EvalResult::to_json() const
{
    return {{"n", n}, {"overall", overall}, {"selector", selector}, {"union", uni}, {"per_classifier", per_classifier}};
}

EvalResult evaluate(const CompositeModel& composite, const data::Dataset& data)
{
    EvalResult r;
    r.n = data.size();
    r.per_classifier.assign(composite.size(), 0.0);
    if (data.size() == 0) return r;
    std::size_t overall = 0, any = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SampleOutcome o = outcome(composite, data.samples[i], data.labels[i]);
        bool hit = false;
        for (std::size_t j = 0; j < composite.size(); ++j) {
            if (!o.correct[j]) continue;
            r.per_classifier[j] += 1.0;
            hit = true;
        }
        any += hit ? 1 : 0;
        overall += o.correct[o.chosen] ? 1 : 0;
    }
    const auto n = static_cast<double>(data.size());
    r.overall = static_cast<double>(overall) / n;
    r.uni = static_cast<double>(any) / n;
    r.selector = any ? static_cast<double>(overall) / static_cast<double>(any) : 0.0;
    for (auto& v : r.per_classifier) v /= n;
    return r;
}

nlohmann::json PhaseRecord::to_json() const
{
    return {
        {"iteration", iteration},
        {"phase", phase},
        {"learning_rate", learning_rate},
        {"loss", {{"selector", loss_selector}, {"single", loss_single}, {"union", loss_union},
                  {"overlap", loss_overlap}, {"total", loss_total}}},
        {"overall", overall},
        {"selector_accuracy", selector_accuracy},
        {"union_accuracy", union_accuracy},
    };
}

void TrainHistory::write_jsonl(const std::filesystem::path& path) const
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : records) out << r.to_json().dump() << '\n';
}

CompositeGradients sample_gradients(const CompositeModel& composite, const Tensor& input, std::size_t true_class,
                                    std::size_t routing, Phase phase, const LossCoefficients& coefficients)
{
    CompositeGradients g;
    g.selector = composite.selector.zero_gradients();
    for (const auto& c : composite.classifiers) g.classifiers.push_back(c.zero_gradients());
    g.loss = accumulate_sample(composite, input, true_class, routing, phase, coefficients, g.selector, g.classifiers);
    return g;
}

double sample_objective(const CompositeModel& composite, const Tensor& input, std::size_t true_class,
                        std::size_t routing, const std::vector<bool>& correct, Phase phase,
                        const LossCoefficients& coefficients, const std::vector<Tensor>* frozen_taps)
{
    const auto sel = nn::forward(composite.selector, input, true);
    if (phase == Phase::Selector) return nn::cross_entropy(sel.logits().data(), routing).loss;
    const auto taps = frozen_taps ? *frozen_taps : model::taps_from(composite, sel);
    std::vector<Tensor> logits;
    for (std::size_t j = 0; j < composite.size(); ++j) {
        logits.push_back(model::run_classifier(composite, j, input, taps, false).logits());
    }
    const CompositeLoss loss = composite_loss(sel.logits(), logits, true_class, routing, coefficients, &correct);
    return coefficients.alpha * loss.single + coefficients.beta * loss.uni + coefficients.gamma * loss.overlap;
}

TrainHistory adversarial_train(CompositeModel& composite, const data::Dataset& train, const TrainConfig& cfg,
                               const data::Dataset* validation)
{
    cfg.validate();
    TrainHistory history;
    const data::Dataset& eval_set = validation ? *validation : train;
    std::mt19937_64 rng(cfg.seed);
    auto order = iota_indices(train.size());

    nn::Gradients sel_grads = composite.selector.zero_gradients();
    std::vector<nn::Gradients> cls_grads;
    for (const auto& c : composite.classifiers) cls_grads.push_back(c.zero_gradients());
    nn::MomentumSgd sel_opt(composite.selector, cfg.sgd.momentum);
    std::vector<nn::MomentumSgd> cls_opt;
    for (const auto& c : composite.classifiers) cls_opt.emplace_back(c, cfg.sgd.momentum);

    double best = -1.0;
    std::size_t since_best = 0;
    CompositeModel best_model;
    const bool tracking = validation != nullptr && cfg.patience > 0;

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double rate = cfg.sgd.rate_at(it);
        RoutingLabels labels = generate_routing_labels(composite, train);

        PhaseRecord sel_rec{.iteration = it, .phase = "selector", .learning_rate = rate};
        double sel_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t epoch = 0; epoch < cfg.epochs_per_phase; ++epoch) {
            if (cfg.regenerate_per_epoch && epoch > 0) labels = generate_routing_labels(composite, train);
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                zero_all(sel_grads);
                for (std::size_t b = start; b < stop; ++b) {
                    const std::size_t idx = order[b];
                    sel_loss += accumulate_sample(composite, train.samples[idx], train.labels[idx], labels.labels[idx],
                                                  Phase::Selector, cfg.coefficients, sel_grads, cls_grads)
                                    .selector;
                    ++seen;
                }
                scale_all(sel_grads, stop - start);
                sel_opt.apply(composite.selector, sel_grads, rate);
            }
        }
        sel_rec.loss_selector = seen ? sel_loss / static_cast<double>(seen) : 0.0;
        sel_rec.loss_total = sel_rec.loss_selector;
        record_eval(sel_rec, composite, eval_set);
        history.records.push_back(sel_rec);

        PhaseRecord cls_rec{.iteration = it, .phase = "classifier", .learning_rate = rate};
        seen = 0;
        const bool through_taps = composite.train_taps && composite.aggregation_enabled;
        for (std::size_t epoch = 0; epoch < cfg.epochs_per_phase; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                for (auto& g : cls_grads) zero_all(g);
                if (through_taps) zero_all(sel_grads);
                for (std::size_t b = start; b < stop; ++b) {
                    const std::size_t idx = order[b];
                    const CompositeLoss l =
                        accumulate_sample(composite, train.samples[idx], train.labels[idx], kSelectorChoice,
                                          Phase::Classifier, cfg.coefficients, sel_grads, cls_grads);
                    cls_rec.loss_selector += l.selector;
                    cls_rec.loss_single += l.single;
                    cls_rec.loss_union += l.uni;
                    cls_rec.loss_overlap += l.overlap;
                    cls_rec.loss_total += l.total;
                    ++seen;
                }
                for (std::size_t j = 0; j < composite.size(); ++j) {
                    scale_all(cls_grads[j], stop - start);
                    cls_opt[j].apply(composite.classifiers[j], cls_grads[j], rate);
                }
                if (through_taps) {
                    scale_all(sel_grads, stop - start);
                    sel_opt.apply(composite.selector, sel_grads, rate);
                }
            }
        }
        if (seen) {
            const auto n = static_cast<double>(seen);
            cls_rec.loss_selector /= n;
            cls_rec.loss_single /= n;
            cls_rec.loss_union /= n;
            cls_rec.loss_overlap /= n;
            cls_rec.loss_total /= n;
        }
        record_eval(cls_rec, composite, eval_set);
        history.records.push_back(cls_rec);
        history.iterations_run = it + 1;

        if (tracking) {
            if (cls_rec.overall > best) {
                best = cls_rec.overall;
                best_model = composite;
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                history.early_stopped = true;
                break;
            }
        }
    }
    if (tracking && best >= 0.0) composite = std::move(best_model);
    return history;
}

TrainHistory joint_train(CompositeModel& composite, const data::Dataset& train, const TrainConfig& cfg,
                         std::size_t epochs, const data::Dataset* validation)
{
    cfg.validate();
    TrainHistory history;
    const data::Dataset& eval_set = validation ? *validation : train;
    std::mt19937_64 rng(cfg.seed);
    auto order = iota_indices(train.size());
    nn::Gradients sel_grads = composite.selector.zero_gradients();
    std::vector<nn::Gradients> cls_grads;
    for (const auto& c : composite.classifiers) cls_grads.push_back(c.zero_gradients());
    nn::MomentumSgd sel_opt(composite.selector, cfg.sgd.momentum);
    std::vector<nn::MomentumSgd> cls_opt;
    for (const auto& c : composite.classifiers) cls_opt.emplace_back(c, cfg.sgd.momentum);
    const bool through_taps = composite.train_taps && composite.aggregation_enabled;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const double rate = cfg.sgd.rate_at(epoch);
        PhaseRecord rec{.iteration = epoch, .phase = "joint", .learning_rate = rate};
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            zero_all(sel_grads);
            for (auto& g : cls_grads) zero_all(g);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = order[b];
                const Tensor& x = train.samples[idx];
                const auto sel_tape = nn::forward(composite.selector, x, true);
                const auto taps = model::taps_from(composite, sel_tape);
                std::vector<nn::ActivationTape> tapes;
                std::vector<Tensor> logits;
                for (std::size_t j = 0; j < composite.size(); ++j) {
                    tapes.push_back(model::run_classifier(composite, j, x, taps, true));
                    logits.push_back(tapes.back().logits());
                }
                const MixtureLoss loss = mixture_loss(sel_tape.logits(), logits, train.labels[idx]);
                rec.loss_total += loss.loss;
                std::vector<Tensor> tap_grads;
                for (const auto& t : taps) tap_grads.emplace_back(t.shape());
                for (std::size_t j = 0; j < composite.size(); ++j) {
                    std::vector<Tensor> side;
                    nn::BackwardExtras extras;
                    if (through_taps) extras.side_grads = &side;
                    nn::backward_accumulate(composite.classifiers[j], tapes[j], loss.classifier_grads[j], cls_grads[j],
                                            extras);
                    for (std::size_t k = 0; k < side.size(); ++k) {
                        for (std::size_t i = 0; i < side[k].size(); ++i) tap_grads[k][i] += side[k][i];
                    }
                }
                std::vector<nn::InjectedGrad> injected;
                if (through_taps) {
                    for (std::size_t k = 0; k < tap_grads.size(); ++k) {
                        injected.push_back({composite.tap_layers[k], std::move(tap_grads[k])});
                    }
                }
                nn::BackwardExtras extras;
                extras.injected = injected;
                nn::backward_accumulate(composite.selector, sel_tape, loss.selector_grad, sel_grads, extras);
            }
            scale_all(sel_grads, stop - start);
            sel_opt.apply(composite.selector, sel_grads, rate);
            for (std::size_t j = 0; j < composite.size(); ++j) {
                scale_all(cls_grads[j], stop - start);
                cls_opt[j].apply(composite.classifiers[j], cls_grads[j], rate);
            }
        }
        rec.loss_total /= static_cast<double>(std::max<std::size_t>(train.size(), 1));
        record_eval(rec, composite, eval_set);
        history.records.push_back(rec);
        history.iterations_run = epoch + 1;
    }
    return history;
}

void save_checkpoint(const std::filesystem::path& path, const CompositeModel& composite, const TrainConfig& cfg,
                     const nlohmann::json& extra)
{
    nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
    meta["train_config"] = to_json(cfg);
    model::save_composite(path, composite, meta);
}

CompositeModel load_checkpoint(const std::filesystem::path& path, TrainConfig* cfg, nlohmann::json* metadata)
{
    nlohmann::json meta;
    CompositeModel composite = model::load_composite(path, &meta);
    if (cfg) {
        if (!meta.contains("train_config")) throw std::runtime_error(path.string() + " has no embedded train config");
        *cfg = train_config_from_json(meta.at("train_config"));
    }
    if (metadata) *metadata = std::move(meta);
    return composite;
}

}  // namespace ditmos::train
