#include "ditmos/cli/app.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "ditmos/cli/report.hpp"
#include "ditmos/data/splitting.hpp"
#include "ditmos/mcu/schedule.hpp"
#include "ditmos/metrics/diversity.hpp"
#include "ditmos/model/composite.hpp"
#include "ditmos/nn/serialize.hpp"
#include "ditmos/train/pipeline.hpp"
#include "ditmos/train/trainer.hpp"

namespace ditmos::cli {

using nlohmann::json;
namespace fs = std::filesystem;

model::ArchitectureSpec RunConfig::architecture(const data::Dataset& data) const
{
    return model::ArchitectureSpec::with_filters(data.channels, data.length, data.num_classes, m, selector_filters,
                                                 classifier_filters, kernel_width);
}

json RunConfig::to_json() const
{
    const auto& s = synthetic;
    return {
        {"seed", seed},
        {"data",
         {{"num_classes", s.num_classes},
          {"clusters_per_class", s.clusters_per_class},
          {"channels", s.channels},
          {"length", s.length},
          {"n", s.n},
          {"noise_sigma", s.noise_sigma},
          {"shift_per_sigma", s.shift_per_sigma},
          {"families", s.families},
          {"family_amplitude", s.family_amplitude},
          {"train_ratio", train_ratio}}},
        {"architecture",
         {{"m", m},
          {"selector_filters", selector_filters},
          {"classifier_filters", classifier_filters},
          {"kernel_width", kernel_width}}},
        {"strong_epochs", strong_epochs},
        {"train", train::to_json(train)},
    };
}

namespace {

void reject_unknown(const json& doc, const std::set<std::string>& known, const std::string& where)
{
    if (!doc.is_object()) throw UsageError(where + " must be a JSON object");
    for (const auto& [key, _] : doc.items()) {
        if (!known.contains(key)) throw UsageError("unknown config field '" + where + "." + key + "'");
    }
}

template <class T>
void read_field(const json& doc, const char* key, T& field)
{
    if (!doc.contains(key)) return;
    try {
        field = doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw UsageError(std::string("config field '") + key + "': " + e.what());
    }
}

}  // namespace

RunConfig run_config_from_json(const json& doc, RunConfig base)
{
    reject_unknown(doc, {"seed", "data", "architecture", "strong_epochs", "train"}, "config");
    read_field(doc, "seed", base.seed);
    read_field(doc, "strong_epochs", base.strong_epochs);
    if (doc.contains("data")) {
        const json& d = doc.at("data");
        reject_unknown(d,
                       {"num_classes", "clusters_per_class", "channels", "length", "n", "noise_sigma",
                        "shift_per_sigma", "families", "family_amplitude", "train_ratio"},
                       "data");
        auto& s = base.synthetic;
        read_field(d, "num_classes", s.num_classes);
        read_field(d, "clusters_per_class", s.clusters_per_class);
        read_field(d, "channels", s.channels);
        read_field(d, "length", s.length);
        read_field(d, "n", s.n);
        read_field(d, "noise_sigma", s.noise_sigma);
        read_field(d, "shift_per_sigma", s.shift_per_sigma);
        read_field(d, "families", s.families);
        read_field(d, "family_amplitude", s.family_amplitude);
        read_field(d, "train_ratio", base.train_ratio);
    }
    if (doc.contains("architecture")) {
        const json& a = doc.at("architecture");
        reject_unknown(a, {"m", "selector_filters", "classifier_filters", "kernel_width"}, "architecture");
        read_field(a, "m", base.m);
        read_field(a, "selector_filters", base.selector_filters);
        read_field(a, "classifier_filters", base.classifier_filters);
        read_field(a, "kernel_width", base.kernel_width);
    }
    if (doc.contains("train")) {
        json merged = train::to_json(base.train);
        merged.merge_patch(doc.at("train"));
        try {
            base.train = train::train_config_from_json(merged);
        } catch (const std::exception& e) {
            throw UsageError(e.what());
        }
    }
    return base;
}

namespace {

/// Options whose values are copied into a JSON patch only when given.
class Overrides {
public:
    template <class T>
    void option(CLI::App* app, const std::string& name, const std::string& pointer, const std::string& help)
    {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(name, *value, help);
        appliers_.emplace_back(opt, [value, pointer](json& patch) { patch[json::json_pointer(pointer)] = *value; });
    }

    void flag(CLI::App* app, const std::string& name, const std::string& pointer, const std::string& help)
    {
        auto value = std::make_shared<bool>(false);
        CLI::Option* opt = app->add_flag(name, *value, help);
        appliers_.emplace_back(opt, [value, pointer](json& patch) { patch[json::json_pointer(pointer)] = *value; });
    }

    json patch() const
    {
        json p = json::object();
        for (const auto& [opt, apply] : appliers_) {
            if (opt->count() > 0) apply(p);
        }
        return p;
    }

private:
    std::vector<std::pair<CLI::Option*, std::function<void(json&)>>> appliers_;
};

struct Common {
    std::string config_path;
    std::string out_dir;
    Overrides overrides;
};

void add_common(CLI::App* sub, Common& c, bool needs_out = true)
{
    c.overrides.option<std::uint64_t>(sub, "--seed", "/seed", "Global seed; every component seed derives from it");
    sub->add_option("--config", c.config_path, "JSON config file (flags take precedence)")->check(CLI::ExistingFile);
    auto* out = sub->add_option("--out", c.out_dir, "Output directory");
    if (needs_out) out->required();
}

void add_data_flags(CLI::App* sub, Overrides& o)
{
    o.option<std::size_t>(sub, "--n", "/data/n", "Number of synthetic samples");
    o.option<std::size_t>(sub, "--classes", "/data/num_classes", "Number of classes");
    o.option<std::size_t>(sub, "--clusters", "/data/clusters_per_class", "Clusters per class");
    o.option<std::size_t>(sub, "--channels", "/data/channels", "Channels per sample");
    o.option<std::size_t>(sub, "--length", "/data/length", "Samples per channel");
    o.option<double>(sub, "--sigma", "/data/noise_sigma", "Noise standard deviation");
    o.option<double>(sub, "--shift-per-sigma", "/data/shift_per_sigma", "Circular shift scale per unit sigma");
    o.option<std::size_t>(sub, "--families", "/data/families", "Number of shared template families");
    o.option<double>(sub, "--family-amplitude", "/data/family_amplitude", "Amplitude of the shared family component");
    o.option<double>(sub, "--train-ratio", "/data/train_ratio", "Per-class fraction kept for training");
}

void add_arch_flags(CLI::App* sub, Overrides& o)
{
    o.option<std::size_t>(sub, "--m", "/architecture/m", "Number of classifiers");
    o.option<std::vector<std::size_t>>(sub, "--selector-filters", "/architecture/selector_filters",
                                       "Selector conv filters");
    o.option<std::vector<std::size_t>>(sub, "--classifier-filters", "/architecture/classifier_filters",
                                       "Classifier conv filters");
    o.option<std::size_t>(sub, "--kernel-width", "/architecture/kernel_width", "Conv kernel width");
}

void add_train_flags(CLI::App* sub, Overrides& o)
{
    o.option<std::size_t>(sub, "--iterations", "/train/iterations", "Adversarial iterations");
    o.option<std::size_t>(sub, "--epochs-per-phase", "/train/epochs_per_phase", "Epochs per selector/classifier phase");
    o.option<std::size_t>(sub, "--batch-size", "/train/batch_size", "Mini-batch size");
    o.option<std::size_t>(sub, "--pretrain-epochs", "/train/pretrain_epochs", "Pre-training epochs per classifier");
    o.option<std::size_t>(sub, "--baseline-epochs", "/train/baseline_epochs", "Epochs for baselines (0: derived)");
    o.option<std::size_t>(sub, "--strong-epochs", "/strong_epochs", "Epochs for the strong model");
    o.option<double>(sub, "--lr", "/train/learning_rate", "Initial learning rate");
    o.option<double>(sub, "--decay-factor", "/train/decay_factor", "Learning-rate decay factor");
    o.option<std::size_t>(sub, "--decay-every", "/train/decay_every_iterations", "Iterations between decays");
    o.option<double>(sub, "--momentum", "/train/momentum", "Heavy-ball momentum");
    o.option<double>(sub, "--alpha", "/train/coefficients/alpha", "Single-correct loss weight");
    o.option<double>(sub, "--beta", "/train/coefficients/beta", "None-correct loss weight");
    o.option<double>(sub, "--gamma", "/train/coefficients/gamma", "Multi-correct loss weight");
    o.option<std::size_t>(sub, "--patience", "/train/patience", "Early-stop patience (0 disables)");
    o.flag(sub, "--random-split", "/train/random_split", "Ablation: random subsets instead of K-Means");
    o.flag(sub, "--synchronous", "/train/synchronous", "Ablation: joint mixture training");
    o.flag(sub, "--no-aggregation", "/train/no_aggregation", "Ablation: no selector feature aggregation");
    o.flag(sub, "--regenerate-per-epoch", "/train/regenerate_per_epoch", "Refresh routing labels every epoch");
}

RunConfig resolve(const Common& c)
{
    RunConfig cfg;
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::parse_error& e) {
            throw UsageError("cannot parse " + c.config_path + ": " + e.what());
        }
        cfg = run_config_from_json(doc, cfg);
    }
    cfg = run_config_from_json(c.overrides.patch(), cfg);
    try {
        cfg.train.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

void write_json(const fs::path& path, const json& doc)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

void snapshot(const fs::path& dir, const std::string& command, const RunConfig& cfg, const json& inputs)
{
    fs::create_directories(dir);
    json doc = cfg.to_json();
    doc["command"] = command;
    doc["inputs"] = inputs;
    write_json(dir / (command + ".config.json"), doc);
}

data::Dataset load_part(const fs::path& dir, const char* part)
{
    return data::load_dataset(dir / (std::string(part) + ".dtmd"));
}

/// A .dtmd file, a .csv file, or a data directory (its test.dtmd).
data::Dataset load_any(const fs::path& path, const RunConfig& cfg)
{
    if (fs::is_directory(path)) return load_part(path, "test");
    if (path.extension() == ".csv") return data::load_csv(path, cfg.synthetic.channels, cfg.synthetic.length);
    return data::load_dataset(path);
}

json eval_json(const train::EvalResult& e)
{
    return {{"n", e.n}, {"overall", e.overall}, {"selector", e.selector}, {"union", e.uni},
            {"per_classifier", e.per_classifier}};
}

std::string percent(double v)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v << '%';
    return s.str();
}

void print_summary(std::ostream& out, const json& report)
{
    out << text_summary(report);
}

train::TrainConfig loop_config(const RunConfig& cfg, std::uint64_t seed)
{
    train::TrainConfig loop = cfg.train;
    loop.seed = seed;
    return loop;
}

int cmd_gen_data(const Common& c, const std::string& from_csv, bool write_csv, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const train::SeedPlan seeds{cfg.seed};
    data::Dataset all;
    if (!from_csv.empty()) {
        all = data::load_csv(from_csv, cfg.synthetic.channels, cfg.synthetic.length);
    } else {
        data::SyntheticConfig sc = cfg.synthetic;
        sc.seed = seeds.data();
        all = data::gen_synthetic(sc);
    }
    const auto [train_set, test_set] = data::split_train_test(all, cfg.train_ratio, seeds.test_split());
    const fs::path dir = c.out_dir;
    snapshot(dir, "gen-data", cfg, {{"from_csv", from_csv}});
    data::save_dataset(dir / "train.dtmd", train_set);
    data::save_dataset(dir / "test.dtmd", test_set);
    if (write_csv) {
        data::write_csv(dir / "train.csv", train_set);
        data::write_csv(dir / "test.csv", test_set);
    }
    out << "wrote " << train_set.size() << " training and " << test_set.size() << " test samples ("
        << all.channels << "x" << all.length << ", " << all.num_classes << " classes) to " << dir.string() << '\n';
    return 0;
}

int cmd_train_strong(const Common& c, const std::string& data_dir, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const train::SeedPlan seeds{cfg.seed};
    const auto train_set = load_part(data_dir, "train");
    const auto test_set = load_part(data_dir, "test");
    const fs::path dir = c.out_dir;
    snapshot(dir, "train-strong", cfg, {{"data", data_dir}});
    auto strong = model::build_strong(cfg.architecture(train_set), seeds.strong());
    train::train_model(strong, train_set, cfg.train, cfg.strong_epochs, seeds.strong());
    nn::save_model(dir / "strong.dtmm", strong);
    const double acc = train::model_accuracy(strong, test_set);
    write_json(dir / "strong.json", {{"test_accuracy", acc}, {"parameter_count", strong.parameter_count()}});
    out << "strong model: " << strong.parameter_count() << " parameters, test accuracy " << percent(acc) << '\n';
    return 0;
}

int cmd_split(const Common& c, const std::string& data_dir, const std::string& strong_path, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const train::SeedPlan seeds{cfg.seed};
    const auto train_set = load_part(data_dir, "train");
    std::optional<nn::Model> strong;
    if (!cfg.train.random_split) {
        if (strong_path.empty()) throw UsageError("split needs --strong unless --random-split is given");
        strong = nn::load_model(strong_path);
    }
    const fs::path dir = c.out_dir;
    snapshot(dir, "split", cfg, {{"data", data_dir}, {"strong", strong_path}});
    const auto split = train::split_training_data(strong ? &*strong : nullptr, train_set, cfg.m,
                                                  cfg.train.random_split, seeds.clustering());
    data::save_dataset(dir / "subsets.dtmd", split.subsets);
    data::write_assignments_csv(dir / "assignments.csv", split.assignments);
    write_json(dir / "split.json", {{"method", cfg.train.random_split ? "random" : "kmeans"}, {"sizes", split.sizes}});
    out << (cfg.train.random_split ? "random" : "k-means") << " split into " << cfg.m << " subsets, sizes";
    for (std::size_t s : split.sizes) out << ' ' << s;
    out << '\n';
    return 0;
}

int cmd_pretrain(const Common& c, const std::string& data_dir, const std::string& subsets_path, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const train::SeedPlan seeds{cfg.seed};
    const auto subsets = data::load_dataset(subsets_path);
    const auto test_set = load_part(data_dir, "test");
    int max_id = -1;
    for (int id : subsets.subset_ids) max_id = std::max(max_id, id);
    if (subsets.subset_ids.size() != subsets.size() || static_cast<std::size_t>(max_id + 1) != cfg.m) {
        throw std::runtime_error(subsets_path + " does not hold " + std::to_string(cfg.m) + " subsets");
    }
    const fs::path dir = c.out_dir;
    snapshot(dir, "pretrain", cfg, {{"data", data_dir}, {"subsets", subsets_path}});
    auto composite = model::build_composite(cfg.architecture(subsets), !cfg.train.no_aggregation, seeds.composite());
    train::pretrain_classifiers(composite, subsets, cfg.train, seeds.pretrain());
    train::save_checkpoint(dir / "pretrained.dtmc", composite, cfg.train, {{"stage", "pretrain"}, {"seed", cfg.seed}});
    const auto e = train::evaluate(composite, test_set);
    out << "pre-trained " << composite.size() << " classifiers: overall " << percent(e.overall) << ", union "
        << percent(e.uni) << '\n';
    return 0;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& checkpoint, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const train::SeedPlan seeds{cfg.seed};
    auto composite = train::load_checkpoint(checkpoint);
    const auto train_set = load_part(data_dir, "train");
    const auto test_set = load_part(data_dir, "test");
    const fs::path dir = c.out_dir;
    snapshot(dir, "train", cfg, {{"data", data_dir}, {"checkpoint", checkpoint}});
    const auto pretrained = train::evaluate(composite, test_set);
    const auto loop = loop_config(cfg, seeds.adversarial());
    const auto history = cfg.train.synchronous
                             ? train::joint_train(composite, train_set, loop, loop.iterations * loop.epochs_per_phase)
                             : train::adversarial_train(composite, train_set, loop);
    train::save_checkpoint(dir / "trained.dtmc", composite, cfg.train, {{"stage", "train"}, {"seed", cfg.seed}});
    history.write_jsonl(dir / "history.jsonl");
    const auto final_eval = train::evaluate(composite, test_set);
    json records = json::array();
    for (const auto& r : history.records) records.push_back(r.to_json());
    const json report = make_report("train", cfg.seed,
                                    {{"iterations_run", history.iterations_run},
                                     {"early_stopped", history.early_stopped},
                                     {"pretrained", eval_json(pretrained)},
                                     {"final", eval_json(final_eval)},
                                     {"history", records}});
    write_report(dir, "train", report);
    out << "trained " << history.iterations_run << (cfg.train.synchronous ? " joint epochs" : " iterations")
        << ": overall " << percent(pretrained.overall) << " -> " << percent(final_eval.overall) << ", union "
        << percent(final_eval.uni) << '\n';
    return 0;
}

int cmd_train_baseline(const Common& c, const std::string& data_dir, const std::string& mode_name, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const train::SeedPlan seeds{cfg.seed};
    train::BaselineMode mode;
    try {
        mode = train::baseline_from_name(mode_name);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto train_set = load_part(data_dir, "train");
    const auto test_set = load_part(data_dir, "test");
    const fs::path dir = c.out_dir;
    snapshot(dir, "train-baseline", cfg, {{"data", data_dir}, {"mode", mode_name}});
    const auto r = train::train_baseline(mode, cfg.architecture(train_set), train_set, test_set, cfg.train,
                                         seeds.baseline());
    const json report = make_report(
        "baseline", cfg.seed,
        {{"mode", mode_name}, {"accuracy", r.accuracy}, {"parameter_count", r.parameter_count}});
    write_report(dir, "baseline_" + mode_name, report);
    out << mode_name << ": accuracy " << percent(r.accuracy) << ", " << r.parameter_count << " parameters\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& data_path, const std::string& checkpoint, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const auto composite = train::load_checkpoint(checkpoint);
    const auto test_set = load_any(data_path, cfg);
    const fs::path dir = c.out_dir;
    snapshot(dir, "eval", cfg, {{"data", data_path}, {"checkpoint", checkpoint}});
    const auto e = train::evaluate(composite, test_set);
    std::vector<std::size_t> routing(composite.size(), 0);
    for (const auto& x : test_set.samples) ++routing[model::route(composite, x)];
    json results = eval_json(e);
    results["best_individual"] =
        e.per_classifier.empty() ? 0.0 : *std::max_element(e.per_classifier.begin(), e.per_classifier.end());
    results["routing_counts"] = routing;
    const json report = make_report("eval", cfg.seed, results);
    write_report(dir, "eval", report);
    print_summary(out, report);
    return 0;
}

/// Input of each classifier's last layer, taps included.
data::FeatureMatrix penultimate_features(const model::CompositeModel& composite, std::size_t j,
                                         const data::Dataset& test)
{
    const auto& layers = composite.classifiers[j].layers();
    const std::size_t layer = layers.size() >= 2 ? layers.size() - 2 : 0;
    data::FeatureMatrix fm;
    fm.rows = test.size();
    fm.cols = nn::shape_size(layers[layer].out_shape);
    for (const auto& x : test.samples) {
        const auto taps = model::taps_from(composite, model::run_selector(composite, x));
        const auto tape = model::run_classifier(composite, j, x, taps, true);
        for (nn::Scalar v : tape.output_of(layer).data()) fm.values.push_back(static_cast<double>(v));
    }
    return fm;
}

int cmd_analyze(const Common& c, const std::string& data_path, const std::string& checkpoint,
                const std::vector<std::string>& model_paths, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const auto test_set = load_any(data_path, cfg);
    const fs::path dir = c.out_dir;
    snapshot(dir, "analyze", cfg, {{"data", data_path}, {"checkpoint", checkpoint}, {"models", model_paths}});
    std::vector<data::FeatureMatrix> features;
    std::vector<metrics::CorrectSet> sets;
    if (!checkpoint.empty()) {
        const auto composite = train::load_checkpoint(checkpoint);
        for (std::size_t j = 0; j < composite.size(); ++j) {
            features.push_back(penultimate_features(composite, j, test_set));
            std::vector<std::size_t> pred;
            for (const auto& x : test_set.samples) {
                pred.push_back(nn::argmax(model::forward_with_aggregation(composite, x, j).classifier_logits.data()));
            }
            sets.push_back(metrics::correct_set_from(pred, test_set.labels, "classifier_" + std::to_string(j)));
        }
    }
    for (const auto& path : model_paths) {
        const auto m = nn::load_model(path);
        const std::size_t layer = m.layers().size() >= 2 ? m.layers().size() - 2 : 0;
        features.push_back(data::extract_layer_features(m, layer, test_set));
        sets.push_back(metrics::correct_set(m, test_set, fs::path(path).stem().string()));
    }
    const json report =
        make_report("analyze", cfg.seed, metrics::diversity_json(metrics::cka_matrix(features), sets, test_set.size()));
    write_report(dir, "analysis", report);
    print_summary(out, report);
    return 0;
}

json plan_json(const mcu::Schedule& schedule)
{
    const auto trace = mcu::simulate_memory(schedule);
    const auto cost = mcu::estimate_cost(schedule);
    return {{"sliced", schedule.sliced},
            {"peak_bytes", trace.peak_bytes},
            {"peak_step", trace.peak_step},
            {"live_bytes", trace.live_bytes},
            {"activation_bytes", trace.activation_bytes},
            {"total_macs", cost.total_macs},
            {"parameter_bytes", cost.parameter_bytes},
            {"spill_store_bytes", cost.spill_store_bytes},
            {"spill_reload_bytes", cost.spill_reload_bytes},
            {"flash_traffic_bytes", cost.flash_traffic_bytes}};
}

int cmd_plan_memory(const Common& c, const std::string& checkpoint, std::size_t classifier, const std::string& mode,
                    std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const auto composite = train::load_checkpoint(checkpoint);
    if (classifier >= composite.size()) throw UsageError("--classifier must be below " + std::to_string(composite.size()));
    const fs::path dir = c.out_dir;
    snapshot(dir, "plan-memory", cfg, {{"checkpoint", checkpoint}, {"classifier", classifier}, {"mode", mode}});
    json plans = json::object();
    for (const bool sliced : {false, true}) {
        const std::string name = sliced ? "sliced" : "unsliced";
        if (mode != "both" && mode != name) continue;
        const auto schedule = mcu::build_schedule(composite, classifier, sliced);
        const auto trace = mcu::simulate_memory(schedule);
        plans[name] = plan_json(schedule);
        write_json(dir / ("schedule_" + name + ".json"), schedule.to_json());
        std::ofstream(dir / ("memory_" + name + ".csv")) << trace.to_csv();
        std::ofstream(dir / ("cost_" + name + ".csv")) << mcu::estimate_cost(schedule).to_csv();
        out << name << ": peak " << trace.peak_bytes << " bytes at step " << trace.peak_step << " ("
            << schedule.steps[trace.peak_step].label << ")\n";
        for (std::size_t s = 0; s < schedule.steps.size(); ++s) {
            const std::size_t width = trace.peak_bytes ? 40 * trace.live_bytes[s] / trace.peak_bytes : 0;
            out << "  " << std::setw(3) << s << ' ' << std::left << std::setw(28) << schedule.steps[s].label
                << std::right << std::setw(9) << trace.live_bytes[s] << ' ' << std::string(width, '#') << '\n';
        }
    }
    const json report = make_report("plan-memory", cfg.seed, {{"classifier", classifier}, {"plans", plans}});
    write_report(dir, "memory", report);
    return 0;
}

int cmd_infer(const Common& c, const std::string& data_path, const std::string& checkpoint,
              std::optional<std::size_t> index, bool mcu_mode, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const auto composite = train::load_checkpoint(checkpoint);
    const auto samples = load_any(data_path, cfg);
    std::vector<std::size_t> which;
    if (index) {
        if (*index >= samples.size()) throw UsageError("--index must be below " + std::to_string(samples.size()));
        which.push_back(*index);
    } else {
        for (std::size_t i = 0; i < samples.size(); ++i) which.push_back(i);
    }
    std::map<std::size_t, mcu::Schedule> schedules;
    std::size_t correct = 0, mismatches = 0;
    std::ostringstream csv;
    csv << "index,label,chosen,predicted\n";
    for (std::size_t i : which) {
        std::size_t chosen = 0;
        auto result = model::infer(composite, samples.samples[i], &chosen);
        if (mcu_mode) {
            auto it = schedules.find(chosen);
            if (it == schedules.end()) it = schedules.emplace(chosen, mcu::build_schedule(composite, chosen, true)).first;
            mcu::FlashStore flash;
            const auto on_device = mcu::execute_schedule(composite, it->second, samples.samples[i], flash);
            if (on_device.classifier_logits != result.classifier_logits) ++mismatches;
            result = on_device;
        }
        const std::size_t predicted = nn::argmax(result.classifier_logits.data());
        correct += predicted == samples.labels[i] ? 1 : 0;
        csv << i << ',' << samples.labels[i] << ',' << chosen << ',' << predicted << '\n';
        if (index) {
            out << "sample " << i << ": classifier " << chosen << ", class " << predicted << " (label "
                << samples.labels[i] << ")\n";
        }
    }
    if (!c.out_dir.empty()) {
        snapshot(c.out_dir, "infer", cfg, {{"data", data_path}, {"checkpoint", checkpoint}, {"mcu", mcu_mode}});
        std::ofstream(fs::path(c.out_dir) / "predictions.csv") << csv.str();
    }
    out << which.size() << " samples, accuracy " << percent(static_cast<double>(correct) / static_cast<double>(which.size()))
        << '\n';
    if (mcu_mode) out << "sliced execution mismatches: " << mismatches << '\n';
    return mismatches == 0 ? 0 : 2;
}

int cmd_export(const Common& c, const std::string& checkpoint, std::ostream& out)
{
    const RunConfig cfg = resolve(c);
    const auto composite = train::load_checkpoint(checkpoint);
    const fs::path dir = c.out_dir;
    snapshot(dir, "export", cfg, {{"checkpoint", checkpoint}});
    nn::save_model(dir / "selector.dtmm", composite.selector);
    json manifest{{"aggregation", composite.aggregation_enabled},
                  {"tap_layers", composite.tap_layers},
                  {"flash_bytes", model::flash_size(composite)},
                  {"selector", {{"file", "selector.dtmm"}, {"parameters", composite.selector.parameter_count()}}},
                  {"classifiers", json::array()}};
    for (std::size_t j = 0; j < composite.size(); ++j) {
        const std::string name = "classifier_" + std::to_string(j);
        nn::save_model(dir / (name + ".dtmm"), composite.classifiers[j]);
        write_json(dir / (name + "_schedule.json"), mcu::build_schedule(composite, j, true).to_json());
        manifest["classifiers"].push_back(
            {{"file", name + ".dtmm"}, {"parameters", composite.classifiers[j].parameter_count()}});
    }
    write_json(dir / "manifest.json", manifest);
    out << "exported selector and " << composite.size() << " classifiers (" << model::flash_size(composite)
        << " flash bytes) to " << dir.string() << '\n';
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"DiTMoS: selector/classifiers training and MCU execution planning"};
    app.name("ditmos");
    app.require_subcommand(1);

    std::map<std::string, Common> commons;
    std::string data_dir, strong_path, subsets_path, checkpoint, from_csv, mode, plan_mode = "both";
    std::vector<std::string> model_paths;
    bool write_csv = false, mcu_mode = false;
    std::size_t classifier = 0;
    std::optional<std::size_t> index;

    auto sub = [&](const char* name, const char* help) {
        CLI::App* s = app.add_subcommand(name, help);
        return std::pair{s, &commons[name]};
    };

    auto [gen, gen_c] = sub("gen-data", "Generate the synthetic benchmark or ingest a CSV, then split train/test");
    add_common(gen, *gen_c);
    add_data_flags(gen, gen_c->overrides);
    gen->add_option("--from-csv", from_csv, "Ingest this CSV (label, then channel-major values) instead")
        ->check(CLI::ExistingFile);
    gen->add_flag("--csv", write_csv, "Also write train.csv and test.csv");

    auto [strong, strong_c] = sub("train-strong", "Train the strong reference model used for K-Means features");
    add_common(strong, *strong_c);
    add_train_flags(strong, strong_c->overrides);
    strong->add_option("--data", data_dir, "Directory with train.dtmd and test.dtmd")->required();

    auto [split, split_c] = sub("split", "Partition the training set into m subsets");
    add_common(split, *split_c);
    add_arch_flags(split, split_c->overrides);
    add_train_flags(split, split_c->overrides);
    split->add_option("--data", data_dir, "Directory with train.dtmd")->required();
    split->add_option("--strong", strong_path, "Strong model file (K-Means features)");

    auto [pre, pre_c] = sub("pretrain", "Build the composite and pre-train each classifier on its subset");
    add_common(pre, *pre_c);
    add_arch_flags(pre, pre_c->overrides);
    add_train_flags(pre, pre_c->overrides);
    pre->add_option("--data", data_dir, "Directory with test.dtmd")->required();
    pre->add_option("--subsets", subsets_path, "Subset file written by split")->required();

    auto [tr, tr_c] = sub("train", "Adversarial (or with --synchronous, joint) training from a checkpoint");
    add_common(tr, *tr_c);
    add_train_flags(tr, tr_c->overrides);
    tr->add_option("--data", data_dir, "Directory with train.dtmd and test.dtmd")->required();
    tr->add_option("--checkpoint", checkpoint, "Input checkpoint")->required();

    auto [base, base_c] = sub("train-baseline", "Train and score a baseline");
    add_common(base, *base_c);
    add_arch_flags(base, base_c->overrides);
    add_train_flags(base, base_c->overrides);
    base->add_option("--data", data_dir, "Directory with train.dtmd and test.dtmd")->required();
    base->add_option("--mode", mode, "sigcla, ensemble, sync_moe or naive_selector")->required();

    auto [ev, ev_c] = sub("eval", "Overall, selector and union accuracy of a checkpoint");
    add_common(ev, *ev_c);
    add_data_flags(ev, ev_c->overrides);
    ev->add_option("--data", data_dir, "Data directory, .dtmd or .csv file")->required();
    ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();

    auto [an, an_c] = sub("analyze", "CKA and correct-set diversity of classifiers and models");
    add_common(an, *an_c);
    add_data_flags(an, an_c->overrides);
    an->add_option("--data", data_dir, "Data directory, .dtmd or .csv file")->required();
    an->add_option("--checkpoint", checkpoint, "Analyze the classifiers of this checkpoint");
    an->add_option("--model", model_paths, "Standalone model files to include");

    auto [plan, plan_c] = sub("plan-memory", "Execution schedule, peak memory and flash traffic");
    add_common(plan, *plan_c);
    plan->add_option("--checkpoint", checkpoint, "Checkpoint to plan")->required();
    plan->add_option("--classifier", classifier, "Classifier index to schedule");
    plan->add_option("--mode", plan_mode, "sliced, unsliced or both")
        ->check(CLI::IsMember({"sliced", "unsliced", "both"}));

    auto [inf, inf_c] = sub("infer", "Route and classify samples");
    add_common(inf, *inf_c, false);
    add_data_flags(inf, inf_c->overrides);
    inf->add_option("--data", data_dir, "Data directory, .dtmd or .csv file")->required();
    inf->add_option("--checkpoint", checkpoint, "Checkpoint to run")->required();
    inf->add_option("--index", index, "Classify only this sample");
    inf->add_flag("--mcu", mcu_mode, "Run through the sliced MCU schedule and flash store");

    auto [ex, ex_c] = sub("export", "Write the selector, classifiers and their schedules as separate files");
    add_common(ex, *ex_c);
    ex->add_option("--checkpoint", checkpoint, "Checkpoint to export")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto chosen = app.get_subcommands();
        err << (chosen.empty() ? app.help() : chosen.front()->help());
        return 1;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    const Common& c = commons.at(name);
    try {
        if (name == "gen-data") return cmd_gen_data(c, from_csv, write_csv, out);
        if (name == "train-strong") return cmd_train_strong(c, data_dir, out);
        if (name == "split") return cmd_split(c, data_dir, strong_path, out);
        if (name == "pretrain") return cmd_pretrain(c, data_dir, subsets_path, out);
        if (name == "train") return cmd_train(c, data_dir, checkpoint, out);
        if (name == "train-baseline") return cmd_train_baseline(c, data_dir, mode, out);
        if (name == "eval") return cmd_eval(c, data_dir, checkpoint, out);
        if (name == "analyze") return cmd_analyze(c, data_dir, checkpoint, model_paths, out);
        if (name == "plan-memory") return cmd_plan_memory(c, checkpoint, classifier, plan_mode, out);
        if (name == "infer") return cmd_infer(c, data_dir, checkpoint, index, mcu_mode, out);
        return cmd_export(c, checkpoint, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n\n" << chosen->help();
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace ditmos::cli
