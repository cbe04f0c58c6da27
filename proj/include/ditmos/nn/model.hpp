#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ditmos/nn/layer.hpp"
#include "ditmos/nn/tensor.hpp"

namespace ditmos::nn {

struct ModelSpec {
    std::size_t in_channels = 0;
    std::size_t in_length = 0;
    std::vector<LayerSpec> layers;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// A layer with its resolved shapes. `weight`/`bias` index into
/// Model::parameters(), or are -1 for parameter-free layers.
struct Layer {
    LayerSpec spec;
    Shape in_shape;
    Shape out_shape;
    int weight = -1;
    int bias = -1;

    friend bool operator==(const Layer&, const Layer&) = default;
};

/// One tensor per parameter tensor, in declaration order.
using Gradients = std::vector<Tensor>;

class Model {
public:
    Model() = default;
    /// Resolves shapes; parameters are zero. Throws on any layer whose input
    /// shape is incompatible, naming the layer.
    explicit Model(ModelSpec spec);

    /// Fan-in scaled uniform init, U(-sqrt(3/fan_in), sqrt(3/fan_in)), zero bias.
    static Model initialized(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const noexcept { return spec_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Tensor>& parameters() noexcept { return params_; }
    const std::vector<Tensor>& parameters() const noexcept { return params_; }

    Shape input_shape() const { return {spec_.in_channels, spec_.in_length}; }
    const Shape& output_shape() const { return layers_.back().out_shape; }
    std::size_t parameter_count() const;
    Gradients zero_gradients() const;
    /// Indices of the concat-channels layers, which consume side inputs in order.
    std::vector<std::size_t> concat_layers() const;

    friend bool operator==(const Model&, const Model&) = default;

private:
    ModelSpec spec_;
    std::vector<Layer> layers_;
    std::vector<Tensor> params_;
};

/// Everything forward() produced. With `recorded`, `outputs[i]` is the output
/// of layer i; otherwise only the final output is kept.
struct ActivationTape {
    bool recorded = false;
    Tensor input;
    std::vector<Tensor> side_inputs;
    std::vector<Tensor> outputs;
    std::vector<std::vector<std::uint32_t>> pool_argmax;

    const Tensor& logits() const { return outputs.back(); }
    const Tensor& output_of(std::size_t layer) const;
};

/// Runs a single layer. `side` is required by concat-channels layers;
/// `argmax` (optional) receives the winning flat input index per pool output.
Tensor forward_layer(const Model& model, std::size_t index, const Tensor& input, const Tensor* side = nullptr,
                     std::vector<std::uint32_t>* argmax = nullptr);

ActivationTape forward(const Model& model, const Tensor& input, bool record, std::span<const Tensor> side_inputs = {});

struct BackwardResult {
    Gradients params;
    Tensor input_grad;
    std::vector<Tensor> side_grads;
};

/// Extra upstream gradient entering at the output of an intermediate layer.
struct InjectedGrad {
    std::size_t layer = 0;
    Tensor grad;
};

struct BackwardExtras {
    std::vector<Tensor>* side_grads = nullptr;  // receives d loss / d side inputs
    Tensor* input_grad = nullptr;               // receives d loss / d input
    std::span<const InjectedGrad> injected;
};

/// Adds the parameter gradients of `loss_grad` (d loss / d logits) into `into`.
void backward_accumulate(const Model& model, const ActivationTape& tape, const Tensor& loss_grad, Gradients& into,
                         const BackwardExtras& extras = {});

BackwardResult backward(const Model& model, const ActivationTape& tape, const Tensor& loss_grad);

}  // namespace ditmos::nn
