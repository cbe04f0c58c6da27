#include "ditmos/nn/layer.hpp"

#include <array>
#include <stdexcept>
#include <utility>

namespace ditmos::nn {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 6> kKindNames{{
    {LayerKind::Conv1d, "conv1d"},
    {LayerKind::MaxPool1d, "maxpool1d"},
    {LayerKind::Dense, "fully-connected"},
    {LayerKind::Relu, "relu"},
    {LayerKind::Softmax, "softmax"},
    {LayerKind::ConcatChannels, "concat-channels"},
}};

}  // namespace

std::string_view kind_name(LayerKind kind)
{
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    throw std::invalid_argument("unknown layer kind " + std::to_string(static_cast<std::uint32_t>(kind)));
}

LayerKind kind_from_name(std::string_view name)
{
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(std::size_t filters, std::size_t width)
{
    return {LayerKind::Conv1d, filters, width, 0, 0};
}

LayerSpec LayerSpec::pool(std::size_t width)
{
    return {LayerKind::MaxPool1d, 0, 0, width, 0};
}

LayerSpec LayerSpec::dense(std::size_t units)
{
    return {LayerKind::Dense, units, 0, 0, 0};
}

LayerSpec LayerSpec::relu()
{
    return {LayerKind::Relu, 0, 0, 0, 0};
}

LayerSpec LayerSpec::softmax()
{
    return {LayerKind::Softmax, 0, 0, 0, 0};
}

LayerSpec LayerSpec::concat(std::size_t side_channels)
{
    return {LayerKind::ConcatChannels, 0, 0, 0, side_channels};
}

void LayerSpec::validate() const
{
    const bool wants_out = kind == LayerKind::Conv1d || kind == LayerKind::Dense;
    const bool wants_kernel = kind == LayerKind::Conv1d;
    const bool wants_pool = kind == LayerKind::MaxPool1d;
    const bool wants_side = kind == LayerKind::ConcatChannels;
    auto check = [&](bool wanted, std::size_t value, const char* field) {
        if (wanted && value == 0) {
            throw std::invalid_argument(std::string(kind_name(kind)) + " layer requires a positive " + field);
        }
        if (!wanted && value != 0) {
            throw std::invalid_argument(std::string(kind_name(kind)) + " layer must not set " + field);
        }
    };
    check(wants_out, out_channels, "out_channels");
    check(wants_kernel, kernel_width, "kernel_width");
    check(wants_pool, pool_width, "pool_width");
    check(wants_side, side_channels, "side_channels");
}

std::string LayerSpec::describe() const
{
    std::string out(kind_name(kind));
    switch (kind) {
    case LayerKind::Conv1d:
        out += "(" + std::to_string(out_channels) + ", k=" + std::to_string(kernel_width) + ")";
        break;
    case LayerKind::Dense:
        out += "(" + std::to_string(out_channels) + ")";
        break;
    case LayerKind::MaxPool1d:
        out += "(" + std::to_string(pool_width) + ")";
        break;
    case LayerKind::ConcatChannels:
        out += "(+" + std::to_string(side_channels) + ")";
        break;
    default:
        break;
    }
    return out;
}

}  // namespace ditmos::nn
