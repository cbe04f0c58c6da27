#include "ditmos/model/architecture.hpp"

#include <stdexcept>
#include <string>

namespace ditmos::model {

using nn::LayerKind;
using nlohmann::json;

std::vector<LayerSpec> conv_stack(const std::vector<std::size_t>& filters, std::size_t kernel_width,
                                  std::size_t pool_width)
{
    std::vector<LayerSpec> layers;
    for (std::size_t f : filters) {
        layers.push_back(LayerSpec::conv(f, kernel_width));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::pool(pool_width));
    }
    return layers;
}

ArchitectureSpec ArchitectureSpec::defaults(std::size_t in_channels, std::size_t in_length, std::size_t num_classes,
                                            std::size_t num_classifiers)
{
    return with_filters(in_channels, in_length, num_classes, num_classifiers, {8, 8, 4}, {8, 8, 4});
}

ArchitectureSpec ArchitectureSpec::with_filters(std::size_t in_channels, std::size_t in_length,
                                                std::size_t num_classes, std::size_t num_classifiers,
                                                const std::vector<std::size_t>& selector_filters,
                                                const std::vector<std::size_t>& classifier_filters,
                                                std::size_t kernel_width)
{
    ArchitectureSpec spec;
    spec.in_channels = in_channels;
    spec.in_length = in_length;
    spec.num_classes = num_classes;
    spec.num_classifiers = num_classifiers;
    spec.selector_layers = conv_stack(selector_filters, kernel_width);
    spec.selector_layers.push_back(LayerSpec::dense(num_classifiers));
    spec.classifier_layers = conv_stack(classifier_filters, kernel_width);
    spec.classifier_layers.push_back(LayerSpec::dense(num_classes));
    std::size_t length = in_length;
    for (std::size_t f : {64, 64, 64, 32, 32, 16}) {
        spec.strong_layers.push_back(LayerSpec::conv(f, kernel_width));
        spec.strong_layers.push_back(LayerSpec::relu());
        // Short inputs keep their last sample instead of pooling to nothing.
        if (length >= 2) {
            spec.strong_layers.push_back(LayerSpec::pool(2));
            length /= 2;
        }
    }
    spec.strong_layers.push_back(LayerSpec::dense(256));
    spec.strong_layers.push_back(LayerSpec::relu());
    spec.strong_layers.push_back(LayerSpec::dense(num_classes));
    return spec;
}

namespace {

std::size_t head_width(const std::vector<LayerSpec>& layers, const char* which)
{
    if (layers.empty() || layers.back().kind != LayerKind::Dense) {
        throw std::invalid_argument(std::string(which) + " layers must end in a fully-connected layer");
    }
    return layers.back().out_channels;
}

}  // namespace

void ArchitectureSpec::validate() const
{
    if (num_classifiers < 1) throw std::invalid_argument("num_classifiers must be positive");
    if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
    if (head_width(selector_layers, "selector") != num_classifiers) {
        throw std::invalid_argument("selector FC output must equal num_classifiers");
    }
    if (head_width(classifier_layers, "classifier") != num_classes) {
        throw std::invalid_argument("classifier FC output must equal num_classes");
    }
    if (head_width(strong_layers, "strong") != num_classes) {
        throw std::invalid_argument("strong model FC output must equal num_classes");
    }
    for (const auto* list : {&selector_layers, &classifier_layers, &strong_layers}) {
        for (const auto& l : *list) {
            l.validate();
            if (l.kind == LayerKind::ConcatChannels) {
                throw std::invalid_argument("architecture layer lists must not contain concat-channels layers");
            }
        }
    }
    // Resolving the specs checks every shape.
    (void)nn::Model(selector_spec());
    (void)nn::Model(classifier_spec());
    (void)nn::Model(strong_spec());
}

nn::ModelSpec ArchitectureSpec::selector_spec() const
{
    return {in_channels, in_length, selector_layers};
}

nn::ModelSpec ArchitectureSpec::classifier_spec() const
{
    return {in_channels, in_length, classifier_layers};
}

nn::ModelSpec ArchitectureSpec::strong_spec() const
{
    return {in_channels, in_length, strong_layers};
}

nn::ModelSpec ArchitectureSpec::sigcla_spec() const
{
    nn::ModelSpec spec{in_channels, in_length, {}};
    std::size_t length = in_length;
    for (const auto* list : {&selector_layers, &classifier_layers}) {
        for (const auto& l : *list) {
            if (l.kind == LayerKind::Dense) continue;
            if (l.kind == LayerKind::MaxPool1d) {
                if (length < l.pool_width) continue;
                length /= l.pool_width;
            }
            spec.layers.push_back(l);
        }
    }
    spec.layers.push_back(LayerSpec::dense(sigcla_hidden));
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::dense(num_classes));
    return spec;
}

json layer_to_json(const LayerSpec& layer)
{
    json j{{"kind", std::string(nn::kind_name(layer.kind))}};
    if (layer.out_channels) j["out_channels"] = layer.out_channels;
    if (layer.kernel_width) j["kernel_width"] = layer.kernel_width;
    if (layer.pool_width) j["pool_width"] = layer.pool_width;
    if (layer.side_channels) j["side_channels"] = layer.side_channels;
    return j;
}

LayerSpec layer_from_json(const json& doc)
{
    LayerSpec l;
    l.kind = nn::kind_from_name(doc.at("kind").get<std::string>());
    l.out_channels = doc.value("out_channels", std::size_t{0});
    l.kernel_width = doc.value("kernel_width", std::size_t{0});
    l.pool_width = doc.value("pool_width", std::size_t{0});
    l.side_channels = doc.value("side_channels", std::size_t{0});
    l.validate();
    return l;
}

namespace {

json layers_to_json(const std::vector<LayerSpec>& layers)
{
    json arr = json::array();
    for (const auto& l : layers) arr.push_back(layer_to_json(l));
    return arr;
}

std::vector<LayerSpec> layers_from_json(const json& arr)
{
    std::vector<LayerSpec> out;
    for (const auto& item : arr) out.push_back(layer_from_json(item));
    return out;
}

}  // namespace

json to_json(const ArchitectureSpec& spec)
{
    return {
        {"in_channels", spec.in_channels},
        {"in_length", spec.in_length},
        {"num_classifiers", spec.num_classifiers},
        {"num_classes", spec.num_classes},
        {"sigcla_hidden", spec.sigcla_hidden},
        {"selector_layers", layers_to_json(spec.selector_layers)},
        {"classifier_layers", layers_to_json(spec.classifier_layers)},
        {"strong_layers", layers_to_json(spec.strong_layers)},
    };
}

ArchitectureSpec architecture_from_json(const json& doc)
{
    const std::size_t in_channels = doc.value("in_channels", std::size_t{3});
    const std::size_t in_length = doc.value("in_length", std::size_t{128});
    const std::size_t classes = doc.value("num_classes", std::size_t{8});
    const std::size_t m = doc.value("num_classifiers", std::size_t{6});
    const auto kernel = doc.value("kernel_width", std::size_t{5});
    const auto sel_filters = doc.value("selector_filters", std::vector<std::size_t>{8, 8, 4});
    const auto cls_filters = doc.value("classifier_filters", std::vector<std::size_t>{8, 8, 4});
    ArchitectureSpec spec =
        ArchitectureSpec::with_filters(in_channels, in_length, classes, m, sel_filters, cls_filters, kernel);
    spec.sigcla_hidden = doc.value("sigcla_hidden", spec.sigcla_hidden);
    if (doc.contains("selector_layers")) spec.selector_layers = layers_from_json(doc["selector_layers"]);
    if (doc.contains("classifier_layers")) spec.classifier_layers = layers_from_json(doc["classifier_layers"]);
    if (doc.contains("strong_layers")) spec.strong_layers = layers_from_json(doc["strong_layers"]);
    spec.validate();
    return spec;
}

std::vector<LayerRange> conv_blocks(const nn::ModelSpec& spec)
{
    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind != LayerKind::Conv1d) continue;
        const bool after_concat = i > 0 && spec.layers[i - 1].kind == LayerKind::ConcatChannels;
        starts.push_back(after_concat ? i - 1 : i);
    }
    std::vector<LayerRange> blocks;
    for (std::size_t b = 0; b < starts.size(); ++b) {
        const std::size_t end = b + 1 < starts.size() ? starts[b + 1] : spec.layers.size();
        blocks.push_back({starts[b], end});
    }
    return blocks;
}

nn::Model build_strong(const ArchitectureSpec& spec, std::uint64_t seed)
{
    spec.validate();
    return nn::Model::initialized(spec.strong_spec(), seed);
}

nn::Model build_weak(const ArchitectureSpec& spec, std::uint64_t seed)
{
    spec.validate();
    return nn::Model::initialized(spec.classifier_spec(), seed);
}

nn::Model build_sigcla(const ArchitectureSpec& spec, std::uint64_t seed)
{
    spec.validate();
    return nn::Model::initialized(spec.sigcla_spec(), seed);
}

std::size_t strong_feature_layer(const nn::Model& strong)
{
    const auto& layers = strong.layers();
    std::size_t last_conv = layers.size();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].spec.kind == LayerKind::Conv1d) last_conv = i;
    }
    if (last_conv == layers.size()) throw std::invalid_argument("model has no convolutional layer");
    std::size_t idx = last_conv;
    while (idx + 1 < layers.size() && layers[idx + 1].spec.kind != LayerKind::Dense) ++idx;
    return idx;
}

}  // namespace ditmos::model
