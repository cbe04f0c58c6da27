#include "ditmos/train/config.hpp"

#include <set>
#include <stdexcept>
#include <string>

namespace ditmos::train {

void LossCoefficients::validate() const
{
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
        throw std::invalid_argument("loss coefficients must be non-negative");
    }
}

void TrainConfig::validate() const
{
    if (epochs_per_phase == 0) throw std::invalid_argument("epochs_per_phase must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    sgd.validate();
    coefficients.validate();
}

std::size_t TrainConfig::resolved_baseline_epochs() const
{
    return baseline_epochs ? baseline_epochs : pretrain_epochs + iterations * epochs_per_phase;
}

nlohmann::json to_json(const LossCoefficients& c)
{
    return {{"alpha", c.alpha}, {"beta", c.beta}, {"gamma", c.gamma}};
}

nlohmann::json to_json(const TrainConfig& c)
{
    return {
        {"iterations", c.iterations},
        {"epochs_per_phase", c.epochs_per_phase},
        {"batch_size", c.batch_size},
        {"pretrain_epochs", c.pretrain_epochs},
        {"baseline_epochs", c.baseline_epochs},
        {"learning_rate", c.sgd.learning_rate},
        {"decay_factor", c.sgd.decay_factor},
        {"decay_every_iterations", c.sgd.decay_every_iterations},
        {"momentum", c.sgd.momentum},
        {"coefficients", to_json(c.coefficients)},
        {"random_split", c.random_split},
        {"synchronous", c.synchronous},
        {"no_aggregation", c.no_aggregation},
        {"regenerate_per_epoch", c.regenerate_per_epoch},
        {"patience", c.patience},
        {"seed", c.seed},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& doc)
{
    if (!doc.is_object()) throw std::invalid_argument("train config must be a JSON object");
    static const std::set<std::string> known{
        "iterations",   "epochs_per_phase", "batch_size",     "pretrain_epochs",     "baseline_epochs",
        "learning_rate", "decay_factor",    "decay_every_iterations", "momentum", "coefficients", "random_split",
        "synchronous",  "no_aggregation",   "regenerate_per_epoch",   "patience",     "seed"};
    for (const auto& [key, _] : doc.items()) {
        if (!known.contains(key)) throw std::invalid_argument("unknown train config field '" + key + "'");
    }
    TrainConfig c;
    auto get = [&](const char* key, auto& field) {
        if (doc.contains(key)) field = doc.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("iterations", c.iterations);
    get("epochs_per_phase", c.epochs_per_phase);
    get("batch_size", c.batch_size);
    get("pretrain_epochs", c.pretrain_epochs);
    get("baseline_epochs", c.baseline_epochs);
    get("learning_rate", c.sgd.learning_rate);
    get("decay_factor", c.sgd.decay_factor);
    get("decay_every_iterations", c.sgd.decay_every_iterations);
    get("momentum", c.sgd.momentum);
    get("random_split", c.random_split);
    get("synchronous", c.synchronous);
    get("no_aggregation", c.no_aggregation);
    get("regenerate_per_epoch", c.regenerate_per_epoch);
    get("patience", c.patience);
    get("seed", c.seed);
    if (doc.contains("coefficients")) {
        const auto& co = doc.at("coefficients");
        for (const auto& [key, _] : co.items()) {
            if (key != "alpha" && key != "beta" && key != "gamma") {
                throw std::invalid_argument("unknown coefficient '" + key + "'");
            }
        }
        if (co.contains("alpha")) c.coefficients.alpha = co.at("alpha").get<double>();
        if (co.contains("beta")) c.coefficients.beta = co.at("beta").get<double>();
        if (co.contains("gamma")) c.coefficients.gamma = co.at("gamma").get<double>();
    }
    c.validate();
    return c;
}

}  // namespace ditmos::train
