#include "ditmos/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace ditmos::nn {

namespace {

std::string layer_label(std::size_t index, const LayerSpec& spec)
{
    return "layer " + std::to_string(index) + " (" + spec.describe() + ")";
}

// Input of a conv layer copied into a zero-padded C x (L + K - 1) buffer.
void pad_input(const Tensor& input, std::size_t kernel, std::vector<Scalar>& padded)
{
    const std::size_t channels = input.dim(0);
    const std::size_t length = input.dim(1);
    const std::size_t left = (kernel - 1) / 2;
    const std::size_t row = length + kernel - 1;
    padded.assign(channels * row, Scalar{0});
    for (std::size_t c = 0; c < channels; ++c) {
        std::copy_n(input.raw() + c * length, length, padded.data() + c * row + left);
    }
}

Tensor conv_forward(const Layer& layer, const Tensor& w, const Tensor& b, const Tensor& input)
{
    const std::size_t in_ch = layer.in_shape[0];
    const std::size_t length = layer.in_shape[1];
    const std::size_t out_ch = layer.spec.out_channels;
    const std::size_t kernel = layer.spec.kernel_width;
    const std::size_t row = length + kernel - 1;
    thread_local std::vector<Scalar> padded;
    pad_input(input, kernel, padded);

    Tensor out({out_ch, length});
    for (std::size_t o = 0; o < out_ch; ++o) {
        Scalar* y = out.raw() + o * length;
        std::fill_n(y, length, b[o]);
        for (std::size_t c = 0; c < in_ch; ++c) {
            const Scalar* x = padded.data() + c * row;
            const Scalar* wk = w.raw() + (o * in_ch + c) * kernel;
            for (std::size_t k = 0; k < kernel; ++k) {
                const Scalar wv = wk[k];
                const Scalar* xs = x + k;
#pragma omp simd
                for (std::size_t t = 0; t < length; ++t) y[t] += wv * xs[t];
            }
        }
    }
    return out;
}

void conv_backward(const Layer& layer, const Tensor& w, const Tensor& input, const Tensor& grad_out, Tensor& gw,
                   Tensor& gb, Tensor* grad_in)
{
    const std::size_t in_ch = layer.in_shape[0];
    const std::size_t length = layer.in_shape[1];
    const std::size_t out_ch = layer.spec.out_channels;
    const std::size_t kernel = layer.spec.kernel_width;
    const std::size_t left = (kernel - 1) / 2;
    const std::size_t row = length + kernel - 1;
    thread_local std::vector<Scalar> padded;
    thread_local std::vector<Scalar> grad_padded;
    pad_input(input, kernel, padded);
    if (grad_in) grad_padded.assign(in_ch * row, Scalar{0});

    for (std::size_t o = 0; o < out_ch; ++o) {
        const Scalar* g = grad_out.raw() + o * length;
        Scalar bias_acc = 0;
#pragma omp simd reduction(+ : bias_acc)
        for (std::size_t t = 0; t < length; ++t) bias_acc += g[t];
        gb[o] += bias_acc;
        for (std::size_t c = 0; c < in_ch; ++c) {
            const Scalar* x = padded.data() + c * row;
            Scalar* gwk = gw.raw() + (o * in_ch + c) * kernel;
            const Scalar* wk = w.raw() + (o * in_ch + c) * kernel;
            for (std::size_t k = 0; k < kernel; ++k) {
                const Scalar* xs = x + k;
                Scalar acc = 0;
#pragma omp simd reduction(+ : acc)
                for (std::size_t t = 0; t < length; ++t) acc += g[t] * xs[t];
                gwk[k] += acc;
                if (grad_in) {
                    Scalar* gx = grad_padded.data() + c * row + k;
                    const Scalar wv = wk[k];
#pragma omp simd
                    for (std::size_t t = 0; t < length; ++t) gx[t] += wv * g[t];
                }
            }
        }
    }
    if (grad_in) {
        *grad_in = Tensor(layer.in_shape);
        for (std::size_t c = 0; c < in_ch; ++c) {
            std::copy_n(grad_padded.data() + c * row + left, length, grad_in->raw() + c * length);
        }
    }
}

Tensor pool_forward(const Layer& layer, const Tensor& input, std::vector<std::uint32_t>* argmax)
{
    const std::size_t channels = layer.in_shape[0];
    const std::size_t length = layer.in_shape[1];
    const std::size_t width = layer.spec.pool_width;
    const std::size_t out_len = layer.out_shape[1];
    Tensor out(layer.out_shape);
    if (argmax) argmax->resize(out.size());
    for (std::size_t c = 0; c < channels; ++c) {
        const Scalar* x = input.raw() + c * length;
        for (std::size_t t = 0; t < out_len; ++t) {
            std::size_t best = t * width;
            for (std::size_t j = 1; j < width; ++j) {
                if (x[t * width + j] > x[best]) best = t * width + j;  // first maximum wins ties
            }
            out[c * out_len + t] = x[best];
            if (argmax) (*argmax)[c * out_len + t] = static_cast<std::uint32_t>(c * length + best);
        }
    }
    return out;
}

Tensor dense_forward(const Layer& layer, const Tensor& w, const Tensor& b, const Tensor& input)
{
    const std::size_t in = input.size();
    const std::size_t units = layer.spec.out_channels;
    Tensor out({units});
    for (std::size_t o = 0; o < units; ++o) {
        const Scalar* wr = w.raw() + o * in;
        const Scalar* x = input.raw();
        Scalar acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
        out[o] = b[o] + acc;
    }
    return out;
}

void dense_backward(const Layer& layer, const Tensor& w, const Tensor& input, const Tensor& grad_out, Tensor& gw,
                    Tensor& gb, Tensor* grad_in)
{
    const std::size_t in = input.size();
    const std::size_t units = layer.spec.out_channels;
    if (grad_in) *grad_in = Tensor(layer.in_shape);
    for (std::size_t o = 0; o < units; ++o) {
        const Scalar g = grad_out[o];
        if (g == Scalar{0}) continue;
        gb[o] += g;
        Scalar* gwr = gw.raw() + o * in;
        const Scalar* x = input.raw();
#pragma omp simd
        for (std::size_t i = 0; i < in; ++i) gwr[i] += g * x[i];
        if (grad_in) {
            const Scalar* wr = w.raw() + o * in;
            Scalar* gx = grad_in->raw();
#pragma omp simd
            for (std::size_t i = 0; i < in; ++i) gx[i] += wr[i] * g;
        }
    }
}

Tensor softmax_values(const Tensor& input)
{
    Tensor out(input.shape());
    const Scalar peak = *std::max_element(input.data().begin(), input.data().end());
    Scalar total = 0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        out[i] = std::exp(input[i] - peak);
        total += out[i];
    }
    for (auto& v : out.data()) v /= total;
    return out;
}

}  // namespace

Model::Model(ModelSpec spec) : spec_(std::move(spec))
{
    if (spec_.in_channels == 0 || spec_.in_length == 0) {
        throw std::invalid_argument("model input shape must be positive");
    }
    if (spec_.layers.empty()) throw std::invalid_argument("model has no layers");
    Shape shape{spec_.in_channels, spec_.in_length};
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const LayerSpec& ls = spec_.layers[i];
        try {
            ls.validate();
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(layer_label(i, ls) + ": " + e.what());
        }
        Layer layer{ls, shape, {}, -1, -1};
        switch (ls.kind) {
        case LayerKind::Conv1d:
            if (shape.size() != 2) {
                throw std::invalid_argument(layer_label(i, ls) + " expects a channels x length input, got " +
                                            shape_string(shape));
            }
            layer.out_shape = {ls.out_channels, shape[1]};
            layer.weight = static_cast<int>(params_.size());
            params_.emplace_back(Shape{ls.out_channels, shape[0], ls.kernel_width});
            layer.bias = static_cast<int>(params_.size());
            params_.emplace_back(Shape{ls.out_channels});
            break;
        case LayerKind::MaxPool1d:
            if (shape.size() != 2 || shape[1] < ls.pool_width) {
                throw std::invalid_argument(layer_label(i, ls) + " cannot pool input " + shape_string(shape));
            }
            layer.out_shape = {shape[0], shape[1] / ls.pool_width};
            break;
        case LayerKind::Dense: {
            const std::size_t in = shape_size(shape);
            layer.out_shape = {ls.out_channels};
            layer.weight = static_cast<int>(params_.size());
            params_.emplace_back(Shape{ls.out_channels, in});
            layer.bias = static_cast<int>(params_.size());
            params_.emplace_back(Shape{ls.out_channels});
            break;
        }
        case LayerKind::Relu:
        case LayerKind::Softmax:
            layer.out_shape = shape;
            break;
        case LayerKind::ConcatChannels:
            if (shape.size() != 2) {
                throw std::invalid_argument(layer_label(i, ls) + " expects a channels x length input, got " +
                                            shape_string(shape));
            }
            layer.out_shape = {shape[0] + ls.side_channels, shape[1]};
            break;
        }
        shape = layer.out_shape;
        layers_.push_back(std::move(layer));
    }
}

Model Model::initialized(ModelSpec spec, std::uint64_t seed)
{
    Model model(std::move(spec));
    std::mt19937_64 rng(seed);
    for (const Layer& layer : model.layers_) {
        if (!layer.spec.trainable()) continue;
        Tensor& w = model.params_[layer.weight];
        const std::size_t fan_in = w.size() / w.dim(0);
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : w.data()) v = static_cast<Scalar>(dist(rng));
    }
    return model;
}

std::size_t Model::parameter_count() const
{
    std::size_t total = 0;
    for (const auto& p : params_) total += p.size();
    return total;
}

Gradients Model::zero_gradients() const
{
    Gradients grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) grads.emplace_back(p.shape());
    return grads;
}

std::vector<std::size_t> Model::concat_layers() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].spec.kind == LayerKind::ConcatChannels) out.push_back(i);
    }
    return out;
}

const Tensor& ActivationTape::output_of(std::size_t layer) const
{
    if (!recorded) throw std::logic_error("activation tape was not recorded");
    return outputs.at(layer);
}

Tensor forward_layer(const Model& model, std::size_t index, const Tensor& input, const Tensor* side,
                     std::vector<std::uint32_t>* argmax)
{
    const Layer& layer = model.layers().at(index);
    const bool flat_ok = layer.spec.kind == LayerKind::Dense || layer.spec.kind == LayerKind::Relu ||
                         layer.spec.kind == LayerKind::Softmax;
    if (flat_ok ? input.size() != shape_size(layer.in_shape) : input.shape() != layer.in_shape) {
        throw std::invalid_argument(layer_label(index, layer.spec) + " expects input " + shape_string(layer.in_shape) +
                                    ", got " + shape_string(input.shape()));
    }
    const auto& params = model.parameters();
    switch (layer.spec.kind) {
    case LayerKind::Conv1d:
        return conv_forward(layer, params[layer.weight], params[layer.bias], input);
    case LayerKind::MaxPool1d:
        return pool_forward(layer, input, argmax);
    case LayerKind::Dense:
        return dense_forward(layer, params[layer.weight], params[layer.bias], input);
    case LayerKind::Relu: {
        Tensor out = input;
        for (auto& v : out.data()) v = v > 0 ? v : Scalar{0};
        return out;
    }
    case LayerKind::Softmax:
        return softmax_values(input);
    case LayerKind::ConcatChannels:
        if (!side) throw std::invalid_argument(layer_label(index, layer.spec) + " needs a side input");
        if (side->rank() != 2 || side->dim(0) != layer.spec.side_channels || side->dim(1) != layer.in_shape[1]) {
            throw std::invalid_argument(layer_label(index, layer.spec) + " side input " + shape_string(side->shape()) +
                                        " does not match " +
                                        shape_string({layer.spec.side_channels, layer.in_shape[1]}));
        }
        return concat_channels(input, *side);
    }
    throw std::logic_error("unreachable layer kind");
}

ActivationTape forward(const Model& model, const Tensor& input, bool record, std::span<const Tensor> side_inputs)
{
    const auto concat = model.concat_layers();
    if (side_inputs.size() != concat.size()) {
        throw std::invalid_argument("model has " + std::to_string(concat.size()) + " concat layers but " +
                                    std::to_string(side_inputs.size()) + " side inputs were given");
    }
    if (input.shape() != model.input_shape()) {
        throw std::invalid_argument("model input expects " + shape_string(model.input_shape()) + ", got " +
                                    shape_string(input.shape()));
    }
    ActivationTape tape;
    tape.recorded = record;
    const auto& layers = model.layers();
    if (record) {
        tape.input = input;
        tape.side_inputs.assign(side_inputs.begin(), side_inputs.end());
        tape.outputs.reserve(layers.size());
        tape.pool_argmax.resize(layers.size());
    }
    Tensor current = input;
    std::size_t side_index = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Tensor* side = nullptr;
        if (layers[i].spec.kind == LayerKind::ConcatChannels) side = &side_inputs[side_index++];
        Tensor next = forward_layer(model, i, current, side, record ? &tape.pool_argmax[i] : nullptr);
        if (record) tape.outputs.push_back(next);
        current = std::move(next);
    }
    if (!record) tape.outputs.push_back(std::move(current));
    return tape;
}

void backward_accumulate(const Model& model, const ActivationTape& tape, const Tensor& loss_grad, Gradients& into,
                         const BackwardExtras& extras)
{
    std::vector<Tensor>* side_grads = extras.side_grads;
    Tensor* input_grad = extras.input_grad;
    if (!tape.recorded) throw std::logic_error("backward requires a tape recorded with record=true");
    const auto& layers = model.layers();
    const auto& params = model.parameters();
    if (into.size() != params.size()) throw std::invalid_argument("gradient buffer does not match model parameters");
    if (loss_grad.size() != shape_size(model.output_shape())) {
        throw std::invalid_argument("loss gradient of shape " + shape_string(loss_grad.shape()) +
                                    " does not match model output " + shape_string(model.output_shape()));
    }
    if (side_grads) side_grads->assign(tape.side_inputs.size(), Tensor{});
    std::size_t side_index = tape.side_inputs.size();

    Tensor grad = loss_grad;
    for (std::size_t idx = layers.size(); idx-- > 0;) {
        const Layer& layer = layers[idx];
        const Tensor& in = idx == 0 ? tape.input : tape.outputs[idx - 1];
        const Tensor& out = tape.outputs[idx];
        const bool need_input = idx > 0 || input_grad != nullptr;
        for (const InjectedGrad& inj : extras.injected) {
            if (inj.layer != idx) continue;
            if (inj.grad.size() != grad.size()) {
                throw std::invalid_argument("injected gradient does not match " + layer_label(idx, layer.spec));
            }
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += inj.grad[i];
        }
        Tensor grad_in;
        switch (layer.spec.kind) {
        case LayerKind::Conv1d:
            conv_backward(layer, params[layer.weight], in, grad, into[layer.weight], into[layer.bias],
                          need_input ? &grad_in : nullptr);
            break;
        case LayerKind::Dense:
            dense_backward(layer, params[layer.weight], in, grad, into[layer.weight], into[layer.bias],
                           need_input ? &grad_in : nullptr);
            break;
        case LayerKind::MaxPool1d: {
            grad_in = Tensor(layer.in_shape);
            const auto& arg = tape.pool_argmax[idx];
            for (std::size_t i = 0; i < arg.size(); ++i) grad_in[arg[i]] += grad[i];
            break;
        }
        case LayerKind::Relu:
            grad_in = Tensor(layer.in_shape);
            for (std::size_t i = 0; i < grad.size(); ++i) grad_in[i] = out[i] > 0 ? grad[i] : Scalar{0};
            break;
        case LayerKind::Softmax: {
            Scalar dot = 0;
            for (std::size_t i = 0; i < grad.size(); ++i) dot += grad[i] * out[i];
            grad_in = Tensor(layer.in_shape);
            for (std::size_t i = 0; i < grad.size(); ++i) grad_in[i] = out[i] * (grad[i] - dot);
            break;
        }
        case LayerKind::ConcatChannels: {
            --side_index;
            const std::size_t own = layer.in_shape[0] * layer.in_shape[1];
            grad_in = Tensor(layer.in_shape, std::vector<Scalar>(grad.data().begin(), grad.data().begin() + own));
            if (side_grads) {
                (*side_grads)[side_index] =
                    Tensor({layer.spec.side_channels, layer.in_shape[1]},
                           std::vector<Scalar>(grad.data().begin() + own, grad.data().end()));
            }
            break;
        }
        }
        grad = std::move(grad_in);
    }
    if (input_grad) *input_grad = std::move(grad);
}

BackwardResult backward(const Model& model, const ActivationTape& tape, const Tensor& loss_grad)
{
    BackwardResult result;
    result.params = model.zero_gradients();
    backward_accumulate(model, tape, loss_grad, result.params, {&result.side_grads, &result.input_grad, {}});
    return result;
}

}  // namespace ditmos::nn
