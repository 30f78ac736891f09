#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "splitnn/error.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn::nn {

// Numeric codes are the on-disk `kind` byte of checkpoints; do not renumber.
enum class LayerKind : std::uint8_t {
    conv2d = 1,
    dwsep_conv2d = 2,
    transposed_dwsep_conv2d = 3,
    relu = 4,
    maxpool = 5,
    avgpool = 6,
    fully_connected = 7,
    softmax_cross_entropy = 8,
    ste_quantize = 9,
};

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::dwsep_conv2d: return "dwsep_conv2d";
        case LayerKind::transposed_dwsep_conv2d: return "transposed_dwsep_conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::avgpool: return "avgpool";
        case LayerKind::fully_connected: return "fully_connected";
        case LayerKind::softmax_cross_entropy: return "softmax_cross_entropy";
        case LayerKind::ste_quantize: return "ste_quantize";
    }
    return "unknown";
}

inline bool valid_kind(std::uint8_t k) { return k >= 1 && k <= 9; }

// Hyperparameters shared by all kinds; fields a kind does not use stay 0.
// For pooling, `kernel` is the window and `stride` the step. For the
// transposed depthwise-separable layer, `in_channels` is the pointwise
// input (C_r) and `out_channels` the restored width (C).
struct LayerHyper {
    std::uint16_t in_channels = 0;
    std::uint16_t out_channels = 0;
    std::uint16_t kernel = 0;
    std::uint16_t stride = 1;
    std::uint16_t pad = 0;
    std::uint16_t out_pad_h = 0;
    std::uint16_t out_pad_w = 0;

    friend bool operator==(const LayerHyper&, const LayerHyper&) = default;
};

// Parameter tensors by kind:
//   conv2d                   W(Cout,Cin,K,K) b(Cout)
//   dwsep_conv2d             Wd(Cin,K,K) bd(Cin) Wp(Cout,Cin,1,1) bp(Cout)
//   transposed_dwsep_conv2d  Wp(Cout,Cin,1,1) bp(Cout) Wd(Cout,K,K) bd(Cout)
//   fully_connected          W(Out,In) b(Out)
// ste_quantize carries its step in `quant_step` and has no parameters.
template <typename T>
struct Layer {
    LayerKind kind = LayerKind::relu;
    LayerHyper hyper;
    std::vector<Tensor<T>> params;
    bool trainable = false;
    float quant_step = 0.0f;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.numel();
        return n;
    }

    friend bool operator==(const Layer&, const Layer&) = default;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t pad, std::size_t stride) {
    if (in + 2 * pad < kernel) throw ShapeError("kernel larger than padded input");
    return (in + 2 * pad - kernel) / stride + 1;
}

inline std::size_t transposed_out_extent(std::size_t in, std::size_t kernel, std::size_t pad, std::size_t stride,
                                         std::size_t out_pad) {
    std::size_t full = (in - 1) * stride + kernel + out_pad;
    if (full < 2 * pad + 1) throw ShapeError("transposed convolution output would be empty");
    return full - 2 * pad;
}

// Per-sample output shape; `in` excludes the batch dimension.
template <typename T>
Shape output_shape(const Layer<T>& l, const Shape& in) {
    const auto& h = l.hyper;
    auto need_chw = [&] {
        if (in.rank() != 3) throw ShapeError(std::string(kind_name(l.kind)) + " expects (C,H,W) input, got " + in.str());
    };
    auto need_channels = [&](std::size_t c) {
        if (in[0] != c)
            throw ShapeError(std::string(kind_name(l.kind)) + " expects " + std::to_string(c) + " channels, got " +
                             in.str());
    };
    switch (l.kind) {
        case LayerKind::conv2d:
        case LayerKind::dwsep_conv2d:
            need_chw();
            need_channels(h.in_channels);
            return Shape{h.out_channels, conv_out_extent(in[1], h.kernel, h.pad, h.stride),
                         conv_out_extent(in[2], h.kernel, h.pad, h.stride)};
        case LayerKind::transposed_dwsep_conv2d:
            need_chw();
            need_channels(h.in_channels);
            return Shape{h.out_channels, transposed_out_extent(in[1], h.kernel, h.pad, h.stride, h.out_pad_h),
                         transposed_out_extent(in[2], h.kernel, h.pad, h.stride, h.out_pad_w)};
        case LayerKind::maxpool:
        case LayerKind::avgpool:
            need_chw();
            return Shape{in[0], conv_out_extent(in[1], h.kernel, 0, h.stride),
                         conv_out_extent(in[2], h.kernel, 0, h.stride)};
        case LayerKind::fully_connected:
            if (in.numel() != h.in_channels)
                throw ShapeError("fully_connected expects " + std::to_string(h.in_channels) + " features, got " +
                                 in.str());
            return Shape{h.out_channels, 1, 1};
        case LayerKind::relu:
        case LayerKind::softmax_cross_entropy:
        case LayerKind::ste_quantize:
            return in;
    }
    throw ShapeError("unknown layer kind");
}

// Number and shapes of parameter tensors implied by the hyperparameters.
template <typename T>
std::vector<Shape> param_shapes(LayerKind kind, const LayerHyper& h) {
    const std::size_t k = h.kernel;
    switch (kind) {
        case LayerKind::conv2d:
            return {Shape{h.out_channels, h.in_channels, k, k}, Shape{h.out_channels}};
        case LayerKind::dwsep_conv2d:
            return {Shape{h.in_channels, k, k}, Shape{h.in_channels}, Shape{h.out_channels, h.in_channels, 1, 1},
                    Shape{h.out_channels}};
        case LayerKind::transposed_dwsep_conv2d:
            return {Shape{h.out_channels, h.in_channels, 1, 1}, Shape{h.out_channels}, Shape{h.out_channels, k, k},
                    Shape{h.out_channels}};
        case LayerKind::fully_connected:
            return {Shape{h.out_channels, h.in_channels}, Shape{h.out_channels}};
        default:
            return {};
    }
}

namespace detail {

// Kaiming-uniform with ReLU gain: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
Tensor<T> kaiming_uniform(const Shape& s, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t(s);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

inline void validate_hyper(LayerKind kind, const LayerHyper& h) {
    auto fail = [&](const std::string& why) {
        throw SpecError(std::string(kind_name(kind)) + ": " + why);
    };
    switch (kind) {
        case LayerKind::conv2d:
        case LayerKind::dwsep_conv2d:
        case LayerKind::transposed_dwsep_conv2d:
            if (h.in_channels == 0 || h.out_channels == 0) fail("channel counts must be >= 1");
            if (h.kernel == 0) fail("kernel must be >= 1");
            if (h.stride == 0) fail("stride must be >= 1");
            if (h.out_pad_h >= h.stride || h.out_pad_w >= h.stride)
                if (kind == LayerKind::transposed_dwsep_conv2d) fail("output padding must be smaller than stride");
            break;
        case LayerKind::maxpool:
        case LayerKind::avgpool:
            if (h.kernel == 0 || h.stride == 0) fail("window and stride must be >= 1");
            break;
        case LayerKind::fully_connected:
            if (h.in_channels == 0 || h.out_channels == 0) fail("feature counts must be >= 1");
            break;
        default:
            break;
    }
}

}  // namespace detail

template <typename T>
Layer<T> make_layer(LayerKind kind, LayerHyper h, std::mt19937_64& rng, bool trainable = false) {
    detail::validate_hyper(kind, h);
    Layer<T> l;
    l.kind = kind;
    l.hyper = h;
    l.trainable = trainable;
    const std::size_t kk = static_cast<std::size_t>(h.kernel) * h.kernel;
    auto shapes = param_shapes<T>(kind, h);
    switch (kind) {
        case LayerKind::conv2d:
            l.params.push_back(detail::kaiming_uniform<T>(shapes[0], h.in_channels * kk, rng));
            l.params.emplace_back(shapes[1]);
            break;
        case LayerKind::dwsep_conv2d:
            l.params.push_back(detail::kaiming_uniform<T>(shapes[0], kk, rng));
            l.params.emplace_back(shapes[1]);
            l.params.push_back(detail::kaiming_uniform<T>(shapes[2], h.in_channels, rng));
            l.params.emplace_back(shapes[3]);
            break;
        case LayerKind::transposed_dwsep_conv2d:
            l.params.push_back(detail::kaiming_uniform<T>(shapes[0], h.in_channels, rng));
            l.params.emplace_back(shapes[1]);
            l.params.push_back(detail::kaiming_uniform<T>(shapes[2], kk, rng));
            l.params.emplace_back(shapes[3]);
            break;
        case LayerKind::fully_connected:
            l.params.push_back(detail::kaiming_uniform<T>(shapes[0], h.in_channels, rng));
            l.params.emplace_back(shapes[1]);
            break;
        default:
            break;
    }
    return l;
}

template <typename T>
Layer<T> make_relu() {
    Layer<T> l;
    l.kind = LayerKind::relu;
    return l;
}

template <typename T>
Layer<T> make_pool(LayerKind kind, std::uint16_t window, std::uint16_t stride) {
    LayerHyper h;
    h.kernel = window;
    h.stride = stride;
    detail::validate_hyper(kind, h);
    Layer<T> l;
    l.kind = kind;
    l.hyper = h;
    return l;
}

template <typename T>
Layer<T> make_ste(float step) {
    if (!(step > 0.0f) || !std::isfinite(step)) throw SpecError("quantization step must be positive and finite");
    Layer<T> l;
    l.kind = LayerKind::ste_quantize;
    l.quant_step = step;
    return l;
}

template <typename To, typename From>
Layer<To> layer_cast(const Layer<From>& l) {
    Layer<To> out;
    out.kind = l.kind;
    out.hyper = l.hyper;
    out.trainable = l.trainable;
    out.quant_step = l.quant_step;
    for (const auto& p : l.params) out.params.push_back(p.template cast<To>());
    return out;
}

}  // namespace splitnn::nn
