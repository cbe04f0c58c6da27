#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ditmos/model/composite.hpp"
#include "ditmos/nn/tensor.hpp"

namespace ditmos::mcu {

/// Activations and parameters are accounted as f32 regardless of the build's
/// Scalar type.
inline constexpr std::size_t kBytesPerElement = 4;

enum class Network { Selector, Classifier, External };
std::string_view network_name(Network network);

struct BufferInfo {
    std::size_t id = 0;
    std::string name;
    nn::Shape shape;
    std::size_t bytes = 0;
};

/// One layer executed on the device. Loads happen before the layer runs,
/// stores right after it.
struct ExecutionStep {
    std::size_t id = 0;
    Network network = Network::External;
    std::size_t layer = 0;
    std::size_t slice = 0;
    std::string label;
    std::vector<std::size_t> inputs;
    std::vector<std::size_t> outputs;
    std::size_t parameter_bytes = 0;
    std::size_t macs = 0;
    std::vector<std::size_t> load_from_flash;
    std::vector<std::size_t> store_to_flash;
};

struct Schedule {
    bool sliced = false;
    bool aggregation = false;
    std::size_t classifier_index = 0;
    std::vector<BufferInfo> buffers;
    std::vector<ExecutionStep> steps;
    /// Present in RAM before the first step.
    std::vector<std::size_t> initial_buffers;
    /// Kept in RAM after the last step.
    std::vector<std::size_t> final_buffers;
    /// Cross-network buffers (the selector taps), empty without aggregation.
    std::vector<std::size_t> tap_buffers;
    std::optional<std::size_t> selector_logits;

    std::size_t slice_count() const;
    /// Every buffer named in some step's store_to_flash.
    std::vector<std::size_t> spill_set() const;
    nlohmann::json to_json() const;
};

/// Selector layers followed by the chosen classifier's layers. Without
/// slicing the taps stay resident from the selector pool that makes them to
/// the classifier concat that reads them; with slicing they are written to
/// flash once produced and reloaded just before the concat.
Schedule build_schedule(const model::CompositeModel& composite, std::size_t classifier_index, bool sliced);

struct BufferLifetime {
    std::size_t buffer = 0;
    std::size_t allocated_at = 0;
    std::size_t freed_after = 0;
};

struct MemoryTrace {
    std::vector<std::size_t> live_bytes;
    std::vector<std::size_t> activation_bytes;
    std::size_t peak_bytes = 0;
    std::size_t peak_step = 0;
    /// One interval per RAM residency; a reloaded buffer gets a second one.
    std::vector<BufferLifetime> lifetimes;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// Walks the schedule, allocating outputs and reloads, freeing each buffer
/// after the last step that reads it while resident. Live bytes at a step
/// cover every resident buffer plus the step's parameters.
MemoryTrace simulate_memory(const Schedule& schedule);

/// Key-value store standing in for external flash. With a directory, every
/// entry is also written to a file and read back from it on take().
class FlashStore {
public:
    FlashStore() = default;
    explicit FlashStore(std::filesystem::path directory);

    struct Event {
        bool store = true;
        std::string key;
        std::size_t bytes = 0;
    };

    void put(const std::string& key, const nn::Tensor& value);
    /// Returns and erases the entry; throws std::out_of_range when missing.
    nn::Tensor take(const std::string& key);
    bool contains(const std::string& key) const { return entries_.contains(key); }
    std::size_t size() const noexcept { return entries_.size(); }
    std::vector<std::string> keys() const;
    const std::vector<Event>& events() const noexcept { return events_; }

private:
    std::filesystem::path file_for(const std::string& key) const;

    std::optional<std::filesystem::path> directory_;
    std::map<std::string, nn::Tensor> entries_;
    std::vector<Event> events_;
};

std::string flash_key(const BufferInfo& buffer);

/// Runs the schedule numerically against the composite it was built from.
model::AggregatedLogits execute_schedule(const model::CompositeModel& composite, const Schedule& schedule,
                                         const nn::Tensor& input, FlashStore& flash);

struct CostReport {
    std::vector<std::size_t> step_macs;
    std::vector<std::size_t> step_flash_bytes;
    std::size_t total_macs = 0;
    std::size_t parameter_bytes = 0;
    std::size_t spill_store_bytes = 0;
    std::size_t spill_reload_bytes = 0;
    std::size_t flash_traffic_bytes = 0;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// Conv: out_channels x out_length x in_channels x kernel_width MACs.
/// Dense: in x out. Traffic: parameters loaded once per step plus every
/// spill store and reload.
CostReport estimate_cost(const Schedule& schedule);

/// MACs of a single layer given its input shape.
std::size_t layer_macs(const nn::Layer& layer);

}  // namespace ditmos::mcu
