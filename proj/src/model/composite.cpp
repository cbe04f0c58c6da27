#include "ditmos/model/composite.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ditmos/nn/serialize.hpp"

namespace ditmos::model {

using nn::LayerKind;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kCompositeMagic{'D', 'T', 'M', 'C'};

}  // namespace

std::size_t CompositeModel::num_classes() const
{
    if (classifiers.empty()) throw std::logic_error("composite has no classifiers");
    return nn::shape_size(classifiers.front().output_shape());
}

std::vector<std::size_t> selector_tap_layers(const nn::Model& selector)
{
    const auto blocks = conv_blocks(selector.spec());
    if (blocks.size() < 2) throw std::invalid_argument("aggregation needs a selector with at least two conv blocks");
    return {blocks[0].end - 1, blocks[1].end - 1};
}

nn::ModelSpec aggregated_classifier_spec(const nn::ModelSpec& classifier, const nn::ModelSpec& selector)
{
    const nn::Model sel(selector);
    const auto taps = selector_tap_layers(sel);
    const auto blocks = conv_blocks(classifier);
    if (blocks.size() < 3) throw std::invalid_argument("aggregation needs a classifier with at least three conv blocks");
    for (const auto& l : classifier.layers) {
        if (l.kind == LayerKind::ConcatChannels) throw std::invalid_argument("classifier spec already aggregates");
    }
    nn::ModelSpec out{classifier.in_channels, classifier.in_length, {}};
    for (std::size_t i = 0; i < classifier.layers.size(); ++i) {
        if (i == blocks[1].begin) out.layers.push_back(LayerSpec::concat(sel.layers()[taps[0]].out_shape[0]));
        if (i == blocks[2].begin) out.layers.push_back(LayerSpec::concat(sel.layers()[taps[1]].out_shape[0]));
        out.layers.push_back(classifier.layers[i]);
    }
    return out;
}

void reset_tap_weights(nn::Model& classifier)
{
    const auto& layers = classifier.layers();
    for (std::size_t i = 1; i < layers.size(); ++i) {
        if (layers[i].spec.kind != LayerKind::Conv1d || layers[i - 1].spec.kind != LayerKind::ConcatChannels) continue;
        const std::size_t side = layers[i - 1].spec.side_channels;
        const std::size_t total = layers[i].in_shape[0];
        const std::size_t own = total - side;
        const double rescale = std::sqrt(static_cast<double>(total) / static_cast<double>(own));
        nn::Tensor& w = classifier.parameters()[layers[i].weight];
        const std::size_t out_ch = w.dim(0);
        const std::size_t kernel = w.dim(2);
        for (std::size_t o = 0; o < out_ch; ++o) {
            for (std::size_t c = 0; c < total; ++c) {
                for (std::size_t k = 0; k < kernel; ++k) {
                    auto& v = w[(o * total + c) * kernel + k];
                    v = c < own ? static_cast<nn::Scalar>(v * rescale) : nn::Scalar{0};
                }
            }
        }
    }
}

CompositeModel make_composite(nn::Model selector, std::vector<nn::Model> classifiers, bool aggregation)
{
    if (classifiers.empty()) throw std::invalid_argument("a composite needs at least one classifier");
    const std::size_t m = classifiers.size();
    if (nn::shape_size(selector.output_shape()) != m) {
        throw std::invalid_argument("selector outputs " + std::to_string(nn::shape_size(selector.output_shape())) +
                                    " logits for " + std::to_string(m) + " classifiers");
    }
    for (const auto& c : classifiers) {
        if (!(c.spec() == classifiers.front().spec())) {
            throw std::invalid_argument("all classifiers must share one architecture");
        }
        if (c.input_shape() != selector.input_shape()) {
            throw std::invalid_argument("classifier and selector input shapes differ");
        }
    }
    CompositeModel composite;
    composite.aggregation_enabled = aggregation;
    const auto concat = classifiers.front().concat_layers();
    if (aggregation) {
        composite.tap_layers = selector_tap_layers(selector);
        if (concat.size() != composite.tap_layers.size()) {
            throw std::invalid_argument("aggregating classifiers need one concat layer per selector tap");
        }
        for (std::size_t t = 0; t < concat.size(); ++t) {
            const auto& tap_shape = selector.layers()[composite.tap_layers[t]].out_shape;
            const auto& layer = classifiers.front().layers()[concat[t]];
            if (tap_shape.size() != 2 || tap_shape[0] != layer.spec.side_channels || tap_shape[1] != layer.in_shape[1]) {
                throw std::invalid_argument("selector tap " + nn::shape_string(tap_shape) +
                                            " does not fit classifier concat layer " + std::to_string(concat[t]));
            }
        }
    } else if (!concat.empty()) {
        throw std::invalid_argument("classifiers expect taps but aggregation is disabled");
    }
    composite.selector = std::move(selector);
    composite.classifiers = std::move(classifiers);
    return composite;
}

CompositeModel build_composite(const ArchitectureSpec& spec, bool aggregation, std::uint64_t seed)
{
    spec.validate();
    if (spec.num_classifiers < 2) throw std::invalid_argument("a composite needs m >= 2 classifiers");
    nn::Model selector = nn::Model::initialized(spec.selector_spec(), seed + kSelectorSeedOffset);
    const nn::ModelSpec cls_spec =
        aggregation ? aggregated_classifier_spec(spec.classifier_spec(), spec.selector_spec()) : spec.classifier_spec();
    std::vector<nn::Model> classifiers;
    for (std::size_t i = 0; i < spec.num_classifiers; ++i) {
        classifiers.push_back(nn::Model::initialized(cls_spec, seed + i));
        if (aggregation) reset_tap_weights(classifiers.back());
    }
    return make_composite(std::move(selector), std::move(classifiers), aggregation);
}

nn::ActivationTape run_selector(const CompositeModel& composite, const Tensor& input)
{
    return nn::forward(composite.selector, input, true);
}

std::vector<Tensor> taps_from(const CompositeModel& composite, const nn::ActivationTape& selector_tape)
{
    std::vector<Tensor> taps;
    if (!composite.aggregation_enabled) return taps;
    for (std::size_t layer : composite.tap_layers) taps.push_back(selector_tape.output_of(layer));
    return taps;
}

std::vector<Tensor> zero_taps(const CompositeModel& composite)
{
    std::vector<Tensor> taps;
    if (!composite.aggregation_enabled) return taps;
    for (std::size_t layer : composite.tap_layers) taps.emplace_back(composite.selector.layers()[layer].out_shape);
    return taps;
}

nn::ActivationTape run_classifier(const CompositeModel& composite, std::size_t index, const Tensor& input,
                                  std::span<const Tensor> taps, bool record)
{
    if (index >= composite.size()) {
        throw std::out_of_range("classifier index " + std::to_string(index) + " out of range for m=" +
                                std::to_string(composite.size()));
    }
    return nn::forward(composite.classifiers[index], input, record, taps);
}

AggregatedLogits forward_with_aggregation(const CompositeModel& composite, const Tensor& input,
                                          std::size_t classifier_index)
{
    if (classifier_index >= composite.size()) {
        throw std::out_of_range("classifier index " + std::to_string(classifier_index) + " out of range for m=" +
                                std::to_string(composite.size()));
    }
    const nn::ActivationTape sel = run_selector(composite, input);
    const auto taps = taps_from(composite, sel);
    const nn::ActivationTape cls = run_classifier(composite, classifier_index, input, taps, false);
    return {sel.logits(), cls.logits()};
}

std::size_t route(const CompositeModel& composite, const Tensor& input)
{
    return nn::argmax(nn::forward(composite.selector, input, false).logits().data());
}

AggregatedLogits infer(const CompositeModel& composite, const Tensor& input, std::size_t* chosen)
{
    const nn::ActivationTape sel = run_selector(composite, input);
    const std::size_t index = nn::argmax(sel.logits().data());
    if (chosen) *chosen = index;
    const auto taps = taps_from(composite, sel);
    return {sel.logits(), run_classifier(composite, index, input, taps, false).logits()};
}

std::size_t flash_size(const CompositeModel& composite)
{
    std::size_t total = nn::serialized_size(composite.selector);
    for (const auto& c : composite.classifiers) total += nn::serialized_size(c);
    return total;
}

std::vector<std::uint8_t> serialize_composite(const CompositeModel& composite, const json& metadata)
{
    json header{
        {"aggregation", composite.aggregation_enabled},
        {"train_taps", composite.train_taps},
        {"num_classifiers", composite.size()},
        {"metadata", metadata.is_null() ? json::object() : metadata},
    };
    const std::string text = header.dump();
    nn::ByteWriter w;
    w.magic(kCompositeMagic);
    w.u32(nn::kFormatVersion);
    w.u32(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());
    w.u32(static_cast<std::uint32_t>(composite.size() + 1));
    auto put = [&](const nn::Model& m) {
        const auto bytes = nn::serialize_model(m);
        w.u64(bytes.size());
        w.bytes(bytes.data(), bytes.size());
    };
    put(composite.selector);
    for (const auto& c : composite.classifiers) put(c);
    return w.take();
}

CompositeModel deserialize_composite(const std::vector<std::uint8_t>& bytes, json* metadata)
{
    nn::ByteReader r(bytes);
    r.expect_magic(kCompositeMagic, "DTMC composite");
    const std::uint32_t version = r.u32();
    if (version != nn::kFormatVersion) throw std::runtime_error("unsupported composite version " + std::to_string(version));
    const std::uint32_t header_len = r.u32();
    std::string text(header_len, '\0');
    r.bytes(text.data(), header_len);
    const json header = json::parse(text);
    const std::uint32_t count = r.u32();
    if (count < 2) throw std::runtime_error("composite container holds fewer than two models");
    std::vector<nn::Model> models;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint64_t len = r.u64();
        if (len > r.remaining()) throw std::runtime_error("truncated composite container");
        std::vector<std::uint8_t> blob(r.cursor(), r.cursor() + len);
        r.skip(len);
        models.push_back(nn::deserialize_model(blob));
    }
    if (r.remaining() != 0) throw std::runtime_error("trailing bytes after composite payload");
    nn::Model selector = std::move(models.front());
    models.erase(models.begin());
    CompositeModel composite = make_composite(std::move(selector), std::move(models), header.at("aggregation").get<bool>());
    composite.train_taps = header.value("train_taps", false);
    if (metadata) *metadata = header.value("metadata", json::object());
    return composite;
}

void save_composite(const std::filesystem::path& path, const CompositeModel& composite, const json& metadata)
{
    nn::write_file(path, serialize_composite(composite, metadata));
}

CompositeModel load_composite(const std::filesystem::path& path, json* metadata)
{
    return deserialize_composite(nn::read_file(path), metadata);
}

}  // namespace ditmos::model
