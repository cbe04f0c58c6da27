#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace ditmos::nn {

enum class LayerKind : std::uint32_t {
    Conv1d = 0,
    MaxPool1d = 1,
    Dense = 2,
    Relu = 3,
    Softmax = 4,
    ConcatChannels = 5,
};

std::string_view kind_name(LayerKind kind);
LayerKind kind_from_name(std::string_view name);

/// One entry of a sequential architecture. Convolutions use stride 1 and
/// "same" zero padding; pooling uses stride equal to its width.
struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::size_t out_channels = 0;   // conv1d, dense
    std::size_t kernel_width = 0;   // conv1d
    std::size_t pool_width = 0;     // maxpool1d
    std::size_t side_channels = 0;  // concat-channels: channels appended from a side input

    static LayerSpec conv(std::size_t filters, std::size_t width = 5);
    static LayerSpec pool(std::size_t width = 2);
    static LayerSpec dense(std::size_t units);
    static LayerSpec relu();
    static LayerSpec softmax();
    static LayerSpec concat(std::size_t side_channels);

    bool trainable() const noexcept { return kind == LayerKind::Conv1d || kind == LayerKind::Dense; }

    /// Throws std::invalid_argument unless exactly the kind's fields are set.
    void validate() const;
    std::string describe() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

}  // namespace ditmos::nn
