#include "ditmos/mcu/schedule.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ditmos/model/architecture.hpp"

namespace ditmos::mcu {

using nlohmann::json;

std::string_view network_name(Network network)
{
    switch (network) {
    case Network::Selector: return "selector";
    case Network::Classifier: return "classifier";
    case Network::External: return "external";
    }
    return "?";
}

std::size_t Schedule::slice_count() const
{
    std::set<std::size_t> ids;
    for (const auto& s : steps) ids.insert(s.slice);
    return ids.size();
}

std::vector<std::size_t> Schedule::spill_set() const
{
    std::vector<std::size_t> out;
    for (const auto& s : steps) out.insert(out.end(), s.store_to_flash.begin(), s.store_to_flash.end());
    std::sort(out.begin(), out.end());
    return out;
}

json Schedule::to_json() const
{
    json b = json::array();
    for (const auto& buf : buffers) {
        b.push_back({{"id", buf.id}, {"name", buf.name}, {"shape", buf.shape}, {"bytes", buf.bytes}});
    }
    json s = json::array();
    for (const auto& st : steps) {
        s.push_back({{"id", st.id},
                     {"network", network_name(st.network)},
                     {"layer", st.layer},
                     {"slice", st.slice},
                     {"label", st.label},
                     {"inputs", st.inputs},
                     {"outputs", st.outputs},
                     {"parameter_bytes", st.parameter_bytes},
                     {"macs", st.macs},
                     {"load_from_flash", st.load_from_flash},
                     {"store_to_flash", st.store_to_flash}});
    }
    return {{"sliced", sliced},           {"aggregation", aggregation},   {"classifier_index", classifier_index},
            {"slice_count", slice_count()}, {"tap_buffers", tap_buffers}, {"buffers", b},
            {"steps", s}};
}

std::size_t layer_macs(const nn::Layer& layer)
{
    switch (layer.spec.kind) {
    case nn::LayerKind::Conv1d:
        return layer.out_shape.at(0) * layer.out_shape.at(1) * layer.in_shape.at(0) * layer.spec.kernel_width;
    case nn::LayerKind::Dense: return nn::shape_size(layer.in_shape) * layer.spec.out_channels;
    default: return 0;
    }
}

namespace {

std::size_t parameter_bytes(const nn::Model& model, const nn::Layer& layer)
{
    std::size_t n = 0;
    if (layer.weight >= 0) n += model.parameters()[static_cast<std::size_t>(layer.weight)].size();
    if (layer.bias >= 0) n += model.parameters()[static_cast<std::size_t>(layer.bias)].size();
    return n * kBytesPerElement;
}

/// Slice of each layer: conv block index, capped so that the third block
/// absorbs everything after it.
std::vector<std::size_t> layer_slices(const nn::ModelSpec& spec)
{
    std::vector<std::size_t> slice(spec.layers.size(), 0);
    const auto blocks = model::conv_blocks(spec);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::size_t id = std::min<std::size_t>(b, 2);
        const std::size_t end = b + 1 < blocks.size() ? blocks[b].end : spec.layers.size();
        for (std::size_t i = blocks[b].begin; i < end; ++i) slice[i] = id;
    }
    return slice;
}

struct ScheduleBuilder {
    Schedule out;

    std::size_t add_buffer(std::string name, const nn::Shape& shape)
    {
        const std::size_t id = out.buffers.size();
        out.buffers.push_back({id, std::move(name), shape, nn::shape_size(shape) * kBytesPerElement});
        return id;
    }

    std::vector<std::size_t> add_network(const nn::Model& model, Network network, std::size_t slice_base,
                                         std::size_t input, std::span<const std::size_t> side_buffers)
    {
        const auto slices = layer_slices(model.spec());
        std::vector<std::size_t> produced;
        std::size_t current = input;
        std::size_t side = 0;
        const std::string prefix(network_name(network));
        for (std::size_t i = 0; i < model.layers().size(); ++i) {
            const auto& layer = model.layers()[i];
            ExecutionStep step;
            step.id = out.steps.size();
            step.network = network;
            step.layer = i;
            step.slice = slice_base + slices[i];
            step.label = prefix + "." + std::to_string(i) + "." + std::string(nn::kind_name(layer.spec.kind));
            step.inputs.push_back(current);
            if (layer.spec.kind == nn::LayerKind::ConcatChannels) {
                const std::size_t tap = side_buffers[side++];
                step.inputs.push_back(tap);
                if (out.sliced) step.load_from_flash.push_back(tap);
            }
            current = add_buffer(step.label, layer.out_shape);
            step.outputs.push_back(current);
            step.parameter_bytes = parameter_bytes(model, layer);
            step.macs = layer_macs(layer);
            out.steps.push_back(std::move(step));
            produced.push_back(current);
        }
        return produced;
    }
};

std::size_t next_read(const Schedule& schedule, std::size_t buffer, std::size_t after)
{
    for (std::size_t t = after + 1; t < schedule.steps.size(); ++t) {
        const auto& in = schedule.steps[t].inputs;
        if (std::find(in.begin(), in.end(), buffer) != in.end()) return t;
    }
    return schedule.steps.size();
}

bool contains(const std::vector<std::size_t>& v, std::size_t x)
{
    return std::find(v.begin(), v.end(), x) != v.end();
}

/// Validates the schedule while walking it. `on_step` sees the resident set
/// while a step runs; `on_free` fires for each buffer leaving RAM after it.
template <typename OnStep, typename OnFree>
void walk_residency(const Schedule& schedule, OnStep&& on_step, OnFree&& on_free)
{
    const std::size_t nbuf = schedule.buffers.size();
    auto check = [&](std::size_t b, std::size_t step) {
        if (b >= nbuf) {
            throw std::invalid_argument("step " + std::to_string(step) + " references unknown buffer " +
                                        std::to_string(b));
        }
    };
    std::set<std::size_t> resident;
    std::set<std::size_t> in_flash;
    std::vector<bool> produced(nbuf, false);
    for (std::size_t b : schedule.initial_buffers) {
        check(b, 0);
        resident.insert(b);
        produced[b] = true;
    }
    for (std::size_t s = 0; s < schedule.steps.size(); ++s) {
        const auto& step = schedule.steps[s];
        for (std::size_t b : step.load_from_flash) {
            check(b, s);
            if (resident.contains(b)) {
                throw std::invalid_argument("step " + std::to_string(s) + " reloads buffer '" +
                                            schedule.buffers[b].name + "' that is still resident");
            }
            if (!in_flash.contains(b)) {
                throw std::invalid_argument("step " + std::to_string(s) + " reloads buffer '" +
                                            schedule.buffers[b].name + "' that was never stored to flash");
            }
            in_flash.erase(b);
            resident.insert(b);
        }
        for (std::size_t b : step.inputs) {
            check(b, s);
            if (!resident.contains(b)) {
                throw std::invalid_argument("step " + std::to_string(s) + " reads dangling buffer '" +
                                            schedule.buffers[b].name + "'");
            }
        }
        for (std::size_t b : step.outputs) {
            check(b, s);
            if (produced[b]) {
                throw std::invalid_argument("buffer '" + schedule.buffers[b].name + "' is produced twice");
            }
            produced[b] = true;
            resident.insert(b);
        }
        on_step(s, resident);
        for (std::size_t b : step.store_to_flash) {
            check(b, s);
            if (!resident.contains(b)) {
                throw std::invalid_argument("step " + std::to_string(s) + " stores non-resident buffer '" +
                                            schedule.buffers[b].name + "'");
            }
            in_flash.insert(b);
        }
        for (auto it = resident.begin(); it != resident.end();) {
            const std::size_t b = *it;
            const std::size_t t = next_read(schedule, b, s);
            const bool keep_final = t == schedule.steps.size() && contains(schedule.final_buffers, b);
            const bool drop = !keep_final && (t == schedule.steps.size() || contains(schedule.steps[t].load_from_flash, b));
            if (drop) {
                on_free(s, b);
                it = resident.erase(it);
            } else {
                ++it;
            }
        }
    }
}

}  // namespace

Schedule build_schedule(const model::CompositeModel& composite, std::size_t classifier_index, bool sliced)
{
    if (classifier_index >= composite.size()) {
        throw std::out_of_range("classifier index " + std::to_string(classifier_index) + " out of range for m=" +
                                std::to_string(composite.size()));
    }
    ScheduleBuilder b;
    b.out.sliced = sliced;
    b.out.aggregation = composite.aggregation_enabled;
    b.out.classifier_index = classifier_index;
    const std::size_t input = b.add_buffer("input", composite.selector.input_shape());
    b.out.initial_buffers.push_back(input);

    const auto sel = b.add_network(composite.selector, Network::Selector, 0, input, {});
    b.out.selector_logits = sel.back();
    if (composite.aggregation_enabled) {
        for (std::size_t layer : composite.tap_layers) {
            const std::size_t tap = sel.at(layer);
            b.out.tap_buffers.push_back(tap);
            if (sliced) b.out.steps[layer].store_to_flash.push_back(tap);
        }
    }
    const std::size_t sel_slices = b.out.steps.empty() ? 0 : b.out.steps.back().slice + 1;
    const auto& classifier = composite.classifiers[classifier_index];
    if (classifier.concat_layers().size() != b.out.tap_buffers.size()) {
        throw std::invalid_argument("classifier concat layers do not match the selector taps");
    }
    const auto cls = b.add_network(classifier, Network::Classifier, sel_slices, input, b.out.tap_buffers);
    b.out.final_buffers.push_back(cls.back());
    return b.out;
}

MemoryTrace simulate_memory(const Schedule& schedule)
{
    MemoryTrace trace;
    std::vector<std::optional<std::size_t>> open(schedule.buffers.size());
    walk_residency(
        schedule,
        [&](std::size_t s, const std::set<std::size_t>& resident) {
            std::size_t bytes = 0;
            for (std::size_t b : resident) {
                bytes += schedule.buffers[b].bytes;
                if (!open[b]) open[b] = s;
            }
            trace.activation_bytes.push_back(bytes);
            const std::size_t live = bytes + schedule.steps[s].parameter_bytes;
            trace.live_bytes.push_back(live);
            if (live > trace.peak_bytes) {
                trace.peak_bytes = live;
                trace.peak_step = s;
            }
        },
        [&](std::size_t s, std::size_t b) {
            trace.lifetimes.push_back({b, *open[b], s});
            open[b].reset();
        });
    for (std::size_t b = 0; b < open.size(); ++b) {
        if (open[b]) trace.lifetimes.push_back({b, *open[b], schedule.steps.size() - 1});
    }
    return trace;
}

json MemoryTrace::to_json() const
{
    json steps = json::array();
    for (std::size_t s = 0; s < live_bytes.size(); ++s) {
        steps.push_back({{"step", s}, {"live_bytes", live_bytes[s]}, {"activation_bytes", activation_bytes[s]}});
    }
    json life = json::array();
    for (const auto& l : lifetimes) {
        life.push_back({{"buffer", l.buffer}, {"allocated_at", l.allocated_at}, {"freed_after", l.freed_after}});
    }
    return {{"peak_bytes", peak_bytes}, {"peak_step", peak_step}, {"steps", steps}, {"lifetimes", life}};
}

std::string MemoryTrace::to_csv() const
{
    std::ostringstream os;
    os << "step,live_bytes,activation_bytes\n";
    for (std::size_t s = 0; s < live_bytes.size(); ++s) {
        os << s << ',' << live_bytes[s] << ',' << activation_bytes[s] << '\n';
    }
    return os.str();
}

FlashStore::FlashStore(std::filesystem::path directory) : directory_(std::move(directory))
{
    std::filesystem::create_directories(*directory_);
}

std::filesystem::path FlashStore::file_for(const std::string& key) const
{
    std::string name = key;
    std::replace(name.begin(), name.end(), '/', '_');
    return *directory_ / (name + ".bin");
}

void FlashStore::put(const std::string& key, const nn::Tensor& value)
{
    if (directory_) {
        std::ofstream f(file_for(key), std::ios::binary);
        const auto rank = static_cast<std::uint32_t>(value.rank());
        f.write(reinterpret_cast<const char*>(&rank), sizeof rank);
        for (std::size_t d : value.shape()) {
            const auto dim = static_cast<std::uint64_t>(d);
            f.write(reinterpret_cast<const char*>(&dim), sizeof dim);
        }
        f.write(reinterpret_cast<const char*>(value.raw()),
                static_cast<std::streamsize>(value.size() * sizeof(nn::Scalar)));
        if (!f) throw std::runtime_error("cannot write flash file " + file_for(key).string());
    }
    entries_[key] = value;
    events_.push_back({true, key, value.size() * kBytesPerElement});
}

nn::Tensor FlashStore::take(const std::string& key)
{
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::out_of_range("flash has no entry '" + key + "'");
    nn::Tensor value = std::move(it->second);
    entries_.erase(it);
    if (directory_) {
        const auto path = file_for(key);
        std::ifstream f(path, std::ios::binary);
        std::uint32_t rank = 0;
        f.read(reinterpret_cast<char*>(&rank), sizeof rank);
        nn::Shape shape(rank);
        for (auto& d : shape) {
            std::uint64_t dim = 0;
            f.read(reinterpret_cast<char*>(&dim), sizeof dim);
            d = static_cast<std::size_t>(dim);
        }
        nn::Tensor loaded(shape);
        f.read(reinterpret_cast<char*>(loaded.raw()), static_cast<std::streamsize>(loaded.size() * sizeof(nn::Scalar)));
        if (!f) throw std::runtime_error("cannot read flash file " + path.string());
        f.close();
        std::filesystem::remove(path);
        value = std::move(loaded);
    }
    events_.push_back({false, key, value.size() * kBytesPerElement});
    return value;
}

std::vector<std::string> FlashStore::keys() const
{
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
}

std::string flash_key(const BufferInfo& buffer)
{
    return "buffer/" + std::to_string(buffer.id) + "/" + buffer.name;
}

model::AggregatedLogits execute_schedule(const model::CompositeModel& composite, const Schedule& schedule,
                                         const nn::Tensor& input, FlashStore& flash)
{
    if (schedule.classifier_index >= composite.size()) {
        throw std::out_of_range("schedule routes to a classifier the composite does not have");
    }
    if (schedule.initial_buffers.size() != 1) throw std::invalid_argument("schedule must start from one input");
    std::map<std::size_t, nn::Tensor> ram;
    ram[schedule.initial_buffers.front()] = input;
    model::AggregatedLogits result;
    const auto& classifier = composite.classifiers[schedule.classifier_index];
    walk_residency(
        schedule,
        [&](std::size_t s, const std::set<std::size_t>&) {
            const auto& step = schedule.steps[s];
            for (std::size_t b : step.load_from_flash) ram[b] = flash.take(flash_key(schedule.buffers[b]));
            const nn::Model* net = nullptr;
            if (step.network == Network::Selector) net = &composite.selector;
            if (step.network == Network::Classifier) net = &classifier;
            if (!net || step.outputs.size() != 1 || step.inputs.empty() || step.inputs.size() > 2) {
                throw std::invalid_argument("step " + std::to_string(s) + " is not executable");
            }
            const nn::Tensor* side = step.inputs.size() == 2 ? &ram.at(step.inputs[1]) : nullptr;
            ram[step.outputs[0]] = nn::forward_layer(*net, step.layer, ram.at(step.inputs[0]), side);
            if (schedule.selector_logits && step.outputs[0] == *schedule.selector_logits) {
                result.selector_logits = ram[step.outputs[0]];
            }
            for (std::size_t b : step.store_to_flash) flash.put(flash_key(schedule.buffers[b]), ram.at(b));
        },
        [&](std::size_t, std::size_t b) { ram.erase(b); });
    if (schedule.final_buffers.size() != 1) throw std::invalid_argument("schedule must end in one output");
    result.classifier_logits = ram.at(schedule.final_buffers.front());
    return result;
}

CostReport estimate_cost(const Schedule& schedule)
{
    CostReport c;
    for (const auto& step : schedule.steps) {
        std::size_t stored = 0;
        std::size_t loaded = 0;
        for (std::size_t b : step.store_to_flash) stored += schedule.buffers.at(b).bytes;
        for (std::size_t b : step.load_from_flash) loaded += schedule.buffers.at(b).bytes;
        c.step_macs.push_back(step.macs);
        c.step_flash_bytes.push_back(step.parameter_bytes + stored + loaded);
        c.total_macs += step.macs;
        c.parameter_bytes += step.parameter_bytes;
        c.spill_store_bytes += stored;
        c.spill_reload_bytes += loaded;
    }
    c.flash_traffic_bytes = c.parameter_bytes + c.spill_store_bytes + c.spill_reload_bytes;
    return c;
}

json CostReport::to_json() const
{
    json steps = json::array();
    for (std::size_t s = 0; s < step_macs.size(); ++s) {
        steps.push_back({{"step", s}, {"macs", step_macs[s]}, {"flash_bytes", step_flash_bytes[s]}});
    }
    return {{"total_macs", total_macs},
            {"parameter_bytes", parameter_bytes},
            {"spill_store_bytes", spill_store_bytes},
            {"spill_reload_bytes", spill_reload_bytes},
            {"flash_traffic_bytes", flash_traffic_bytes},
            {"steps", steps}};
}

std::string CostReport::to_csv() const
{
    std::ostringstream os;
    os << "step,macs,flash_bytes\n";
    for (std::size_t s = 0; s < step_macs.size(); ++s) os << s << ',' << step_macs[s] << ',' << step_flash_bytes[s] << '\n';
    return os.str();
}

}  // namespace ditmos::mcu
