#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "splitnn/error.hpp"
#include "splitnn/nn/kernels.hpp"
#include "splitnn/nn/layer.hpp"
#include "splitnn/quantizer.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn::nn {

// A named boundary between layers: boundary b sits in front of layers[b],
// so 0 is the graph input and layers.size() the output.
struct CutPoint {
    std::string name;
    std::size_t boundary = 0;

    friend bool operator==(const CutPoint&, const CutPoint&) = default;
};

inline std::uint64_t next_graph_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

template <typename T>
struct LayerGraph {
    Shape input_shape;  // per sample, without batch
    std::vector<Layer<T>> layers;
    std::vector<CutPoint> cuts;
    std::uint64_t id = next_graph_id();
    std::uint64_t revision = 0;  // bumped whenever weights change

    std::size_t size() const noexcept { return layers.size(); }

    void add_cut(std::string name) {
        for (const auto& c : cuts)
            if (c.name == name) throw SpecError("duplicate cut point '" + name + "'");
        cuts.push_back({std::move(name), layers.size()});
    }

    bool has_cut(const std::string& name) const {
        for (const auto& c : cuts)
            if (c.name == name) return true;
        return false;
    }

    std::size_t boundary(const std::string& name) const {
        for (const auto& c : cuts)
            if (c.name == name) return c.boundary;
        throw SpecError("unknown split point '" + name + "'");
    }

    // Per-sample shape at a boundary.
    Shape shape_at(std::size_t boundary) const {
        if (boundary > layers.size()) throw ShapeError("boundary out of range");
        Shape s = input_shape;
        for (std::size_t i = 0; i < boundary; ++i) {
            try {
                s = output_shape(layers[i], s);
            } catch (const ShapeError& e) {
                throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
            }
        }
        return s;
    }

    Shape output_shape_of() const { return shape_at(layers.size()); }

    // Shapes compose end to end and cut points are unique and in range.
    void validate() const {
        (void)shape_at(layers.size());
        std::set<std::string> names;
        for (const auto& c : cuts) {
            if (!names.insert(c.name).second) throw SpecError("duplicate cut point '" + c.name + "'");
            if (c.boundary > layers.size()) throw SpecError("cut point '" + c.name + "' beyond last layer");
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto expected = param_shapes<T>(layers[i].kind, layers[i].hyper);
            if (expected.size() != layers[i].params.size())
                throw ShapeError("layer " + std::to_string(i) + ": wrong number of parameter tensors");
            for (std::size_t p = 0; p < expected.size(); ++p)
                if (layers[i].params[p].shape() != expected[p])
                    throw ShapeError("layer " + std::to_string(i) + ": parameter " + std::to_string(p) +
                                     " has shape " + layers[i].params[p].shape().str() + ", expected " +
                                     expected[p].str());
        }
    }
};

template <typename To, typename From>
LayerGraph<To> graph_cast(const LayerGraph<From>& g) {
    LayerGraph<To> out;
    out.input_shape = g.input_shape;
    out.cuts = g.cuts;
    for (const auto& l : g.layers) out.layers.push_back(layer_cast<To>(l));
    return out;
}

template <typename T>
std::size_t count_parameters(const LayerGraph<T>& g, bool only_trainable) {
    std::size_t n = 0;
    for (const auto& l : g.layers)
        if (!only_trainable || l.trainable) n += l.param_count();
    return n;
}

// Cached activations of one forward pass over [from, to), plus the
// gradients filled in by backward().
template <typename T>
struct GradTape {
    std::uint64_t graph_id = 0;
    std::uint64_t revision = 0;
    std::size_t from = 0;
    std::size_t to = 0;
    std::vector<Tensor<T>> inputs;  // inputs[i] feeds layer from + i
    std::vector<Tensor<T>> aux;     // inner activation of composite layers
    std::vector<std::vector<std::uint32_t>> argmax;
    std::vector<std::vector<Tensor<T>>> param_grads;  // empty for frozen layers
    Tensor<T> input_grad;
    bool recorded = false;
    bool has_grads = false;

    const std::vector<Tensor<T>>* grads_for(std::size_t layer) const {
        if (!has_grads || layer < from || layer >= to) return nullptr;
        const auto& g = param_grads[layer - from];
        return &g;
    }
};

namespace detail {

template <typename T>
kernels::Geometry conv_geometry(const Layer<T>& l, const Shape& in_batched, const Shape& out_batched) {
    return {in_batched[0], in_batched[1], in_batched[2], in_batched[3], out_batched[1], out_batched[2],
            out_batched[3], l.hyper.kernel, l.hyper.stride, l.hyper.pad};
}

inline Shape batched(std::size_t n, const Shape& s) {
    std::vector<std::size_t> dims{n};
    dims.insert(dims.end(), s.dims().begin(), s.dims().end());
    return Shape(dims);
}

inline Shape unbatched(const Shape& s) {
    if (s.rank() < 2) throw ShapeError("expected a batched tensor, got " + s.str());
    return Shape(std::vector<std::size_t>(s.dims().begin() + 1, s.dims().end()));
}

// Runs one layer on a batched input. `aux`/`argmax` are filled when the
// layer needs them for backward and the pointers are non-null.
template <typename T>
Tensor<T> layer_forward(const Layer<T>& l, const Tensor<T>& x, Tensor<T>* aux, std::vector<std::uint32_t>* argmax) {
    const std::size_t n = x.shape()[0];
    const Shape out_s = batched(n, output_shape(l, unbatched(x.shape())));
    Tensor<T> y(out_s);
    const auto& p = l.params;
    switch (l.kind) {
        case LayerKind::conv2d: {
            auto g = conv_geometry(l, x.shape(), out_s);
            kernels::conv2d_forward(x, p[0], p[1], g, y);
            break;
        }
        case LayerKind::dwsep_conv2d: {
            // depthwise (C -> C, stride S) then pointwise (C -> Cout)
            Shape mid_s{n, x.shape()[1], out_s[2], out_s[3]};
            Tensor<T> mid(mid_s);
            kernels::Geometry g{n, x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[1], out_s[2], out_s[3],
                                l.hyper.kernel, l.hyper.stride, l.hyper.pad};
            kernels::depthwise_forward(x.data().data(), p[0].data().data(), p[1].data().data(), g, mid.data().data());
            kernels::pointwise_forward(mid.data().data(), p[2].data().data(), p[3].data().data(), n, mid_s[1],
                                       out_s[1], out_s[2] * out_s[3], y.data().data());
            if (aux) *aux = std::move(mid);
            break;
        }
        case LayerKind::transposed_dwsep_conv2d: {
            // pointwise (C_r -> C) then transposed depthwise (stride S)
            Shape mid_s{n, out_s[1], x.shape()[2], x.shape()[3]};
            Tensor<T> mid(mid_s);
            kernels::pointwise_forward(x.data().data(), p[0].data().data(), p[1].data().data(), n, x.shape()[1],
                                       out_s[1], x.shape()[2] * x.shape()[3], mid.data().data());
            kernels::Geometry g{n, out_s[1], out_s[2], out_s[3], out_s[1], mid_s[2], mid_s[3],
                                l.hyper.kernel, l.hyper.stride, l.hyper.pad};
            kernels::depthwise_transposed_forward(mid.data().data(), p[2].data().data(), p[3].data().data(), g,
                                                  y.data().data());
            if (aux) *aux = std::move(mid);
            break;
        }
        case LayerKind::relu:
            for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
            break;
        case LayerKind::maxpool: {
            auto g = conv_geometry(l, x.shape(), out_s);
            std::vector<std::uint32_t> idx(y.numel());
            kernels::maxpool_forward(x.data().data(), g, y.data().data(), idx.data());
            if (argmax) *argmax = std::move(idx);
            break;
        }
        case LayerKind::avgpool: {
            auto g = conv_geometry(l, x.shape(), out_s);
            kernels::avgpool_forward(x.data().data(), g, y.data().data());
            break;
        }
        case LayerKind::fully_connected:
            kernels::fc_forward(x.data().data(), p[0].data().data(), p[1].data().data(), n, l.hyper.in_channels,
                                l.hyper.out_channels, y.data().data());
            break;
        case LayerKind::softmax_cross_entropy: {
            const std::size_t classes = x.numel() / n;
            kernels::softmax_rows(x.data().data(), n, classes, y.data().data());
            if (aux) *aux = y;
            break;
        }
        case LayerKind::ste_quantize:
            y = x;
            quantize_dequantize_inplace(y.data(), l.quant_step);
            break;
    }
    return y;
}

// Input gradient of one layer; accumulates into `pgrads` when non-null.
template <typename T>
Tensor<T> layer_backward(const Layer<T>& l, const Tensor<T>& x, const Tensor<T>& aux,
                         const std::vector<std::uint32_t>& argmax, const Tensor<T>& dy,
                         std::vector<Tensor<T>>* pgrads) {
    const std::size_t n = x.shape()[0];
    const Shape& out_s = dy.shape();
    Tensor<T> dx(x.shape());
    const auto& p = l.params;
    auto pg = [&](std::size_t i) -> T* { return pgrads ? (*pgrads)[i].data().data() : nullptr; };
    switch (l.kind) {
        case LayerKind::conv2d: {
            auto g = conv_geometry(l, x.shape(), out_s);
            kernels::conv2d_backward(x, p[0], dy, g, dx, pgrads ? &(*pgrads)[0] : nullptr,
                                     pgrads ? &(*pgrads)[1] : nullptr);
            break;
        }
        case LayerKind::dwsep_conv2d: {
            const Tensor<T>& mid = aux;
            Tensor<T> dmid(mid.shape());
            kernels::pointwise_backward(mid.data().data(), p[2].data().data(), dy.data().data(), n, mid.shape()[1],
                                        out_s[1], out_s[2] * out_s[3], dmid.data().data(), pg(2), pg(3));
            kernels::Geometry g{n, x.shape()[1], x.shape()[2], x.shape()[3], x.shape()[1], out_s[2], out_s[3],
                                l.hyper.kernel, l.hyper.stride, l.hyper.pad};
            kernels::depthwise_backward(x.data().data(), p[0].data().data(), dmid.data().data(), g, dx.data().data(),
                                        pg(0), pg(1));
            break;
        }
        case LayerKind::transposed_dwsep_conv2d: {
            const Tensor<T>& mid = aux;
            Tensor<T> dmid(mid.shape());
            kernels::Geometry g{n, out_s[1], out_s[2], out_s[3], out_s[1], mid.shape()[2], mid.shape()[3],
                                l.hyper.kernel, l.hyper.stride, l.hyper.pad};
            kernels::depthwise_transposed_backward(mid.data().data(), p[2].data().data(), dy.data().data(), g,
                                                   dmid.data().data(), pg(2), pg(3));
            kernels::pointwise_backward(x.data().data(), p[0].data().data(), dmid.data().data(), n, x.shape()[1],
                                        out_s[1], x.shape()[2] * x.shape()[3], dx.data().data(), pg(0), pg(1));
            break;
        }
        case LayerKind::relu:
            for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
            break;
        case LayerKind::maxpool: {
            auto g = conv_geometry(l, x.shape(), out_s);
            kernels::maxpool_backward(dy.data().data(), argmax.data(), g, dx.data().data());
            break;
        }
        case LayerKind::avgpool: {
            auto g = conv_geometry(l, x.shape(), out_s);
            kernels::avgpool_backward(dy.data().data(), g, dx.data().data());
            break;
        }
        case LayerKind::fully_connected:
            kernels::fc_backward(x.data().data(), p[0].data().data(), dy.data().data(), n, l.hyper.in_channels,
                                 l.hyper.out_channels, dx.data().data(), pg(0), pg(1));
            break;
        case LayerKind::softmax_cross_entropy: {
            // dx = y * (dy - <dy, y>) per row
            const Tensor<T>& y = aux;
            const std::size_t classes = x.numel() / n;
            for (std::size_t r = 0; r < n; ++r) {
                T dot{0};
                for (std::size_t j = 0; j < classes; ++j) dot += dy[r * classes + j] * y[r * classes + j];
                for (std::size_t j = 0; j < classes; ++j)
                    dx[r * classes + j] = y[r * classes + j] * (dy[r * classes + j] - dot);
            }
            break;
        }
        case LayerKind::ste_quantize:
            // straight-through: identity Jacobian
            dx = dy;
            break;
    }
    return dx;
}

template <typename T>
void check_input(const LayerGraph<T>& g, const Tensor<T>& x, std::size_t from, std::size_t to) {
    if (from > to || to > g.layers.size())
        throw ShapeError("invalid layer range [" + std::to_string(from) + ", " + std::to_string(to) + ")");
    const Shape expected = g.shape_at(from);
    if (x.shape().rank() != expected.rank() + 1 || unbatched(x.shape()) != expected)
        throw ShapeError("input " + x.shape().str() + " does not match (N," + expected.str().substr(1) +
                         " expected at boundary " + std::to_string(from));
}

}  // namespace detail

// Sub-graph [from, to) on a batched input.
template <typename T>
Tensor<T> forward(const LayerGraph<T>& g, const Tensor<T>& x, std::size_t from, std::size_t to) {
    detail::check_input(g, x, from, to);
    Tensor<T> cur = x;
    for (std::size_t i = from; i < to; ++i) {
        try {
            cur = detail::layer_forward<T>(g.layers[i], cur, nullptr, nullptr);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return cur;
}

template <typename T>
Tensor<T> forward(const LayerGraph<T>& g, const Tensor<T>& x, const std::optional<std::string>& from = std::nullopt,
                  const std::optional<std::string>& to = std::nullopt) {
    return forward(g, x, from ? g.boundary(*from) : 0, to ? g.boundary(*to) : g.layers.size());
}

// Forward pass that records what backward() needs.
template <typename T>
std::pair<Tensor<T>, GradTape<T>> forward_train(const LayerGraph<T>& g, const Tensor<T>& x, std::size_t from,
                                                std::size_t to) {
    detail::check_input(g, x, from, to);
    GradTape<T> tape;
    tape.graph_id = g.id;
    tape.revision = g.revision;
    tape.from = from;
    tape.to = to;
    const std::size_t count = to - from;
    tape.inputs.reserve(count);
    tape.aux.resize(count);
    tape.argmax.resize(count);
    Tensor<T> cur = x;
    for (std::size_t i = from; i < to; ++i) {
        tape.inputs.push_back(cur);
        try {
            cur = detail::layer_forward<T>(g.layers[i], tape.inputs.back(), &tape.aux[i - from],
                                           &tape.argmax[i - from]);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    tape.recorded = true;
    return {std::move(cur), std::move(tape)};
}

struct BackwardOptions {
    // Skip the gradient w.r.t. the tape's input (e.g. raw images).
    bool input_grad = true;
};

// Reverse pass over the taped range. `injections[b]` is added to the
// gradient flowing through boundary b, which is how a loss term on an
// intermediate activation (the rate loss on the encoder output) enters.
template <typename T>
GradTape<T> backward(const LayerGraph<T>& g, GradTape<T> tape, const Tensor<T>& upstream,
                     const std::map<std::size_t, Tensor<T>>& injections = {}, BackwardOptions opts = {}) {
    if (!tape.recorded) throw StateError("backward called without a recorded forward pass");
    if (tape.graph_id != g.id || tape.revision != g.revision || tape.to > g.layers.size())
        throw StateError("stale gradient tape: graph changed since forward");
    if (tape.has_grads) throw StateError("gradient tape already consumed by backward");
    const Shape out_expected = detail::batched(tape.inputs.empty() ? upstream.shape()[0] : tape.inputs[0].shape()[0],
                                               g.shape_at(tape.to));
    if (upstream.shape() != out_expected)
        throw ShapeError("upstream gradient " + upstream.shape().str() + " does not match output " +
                         out_expected.str());

    tape.param_grads.assign(tape.to - tape.from, {});
    // Earliest layer that needs any backward work.
    std::size_t stop = tape.from;
    if (!opts.input_grad) {
        stop = tape.to;
        for (std::size_t i = tape.from; i < tape.to; ++i)
            if (g.layers[i].trainable) {
                stop = i;
                break;
            }
    }

    Tensor<T> grad = upstream;
    auto inject = [&](std::size_t b) {
        auto it = injections.find(b);
        if (it == injections.end()) return;
        if (it->second.shape() != grad.shape())
            throw ShapeError("injected gradient at boundary " + std::to_string(b) + " has wrong shape");
        for (std::size_t k = 0; k < grad.numel(); ++k) grad[k] += it->second[k];
    };
    inject(tape.to);
    for (std::size_t i = tape.to; i-- > stop;) {
        const auto& layer = g.layers[i];
        const std::size_t t = i - tape.from;
        std::vector<Tensor<T>>* pg = nullptr;
        if (layer.trainable && !layer.params.empty()) {
            for (const auto& p : layer.params) tape.param_grads[t].emplace_back(p.shape());
            pg = &tape.param_grads[t];
        }
        grad = detail::layer_backward<T>(layer, tape.inputs[t], tape.aux[t], tape.argmax[t], grad, pg);
        inject(i);
    }
    tape.input_grad = (stop == tape.from) ? std::move(grad) : Tensor<T>();
    tape.has_grads = true;
    return tape;
}

}  // namespace splitnn::nn
