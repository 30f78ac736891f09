#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "splitnn/bytes.hpp"
#include "splitnn/error.hpp"
#include "splitnn/hyperparams.hpp"
#include "splitnn/nn/checkpoint.hpp"
#include "splitnn/nn/graph.hpp"
#include "splitnn/nn/layer.hpp"

namespace splitnn {

inline constexpr std::uint16_t kBottleneckKernel = 3;

// Reserved cut names added by insert().
inline constexpr const char* kCutInput = "bottleneck.input";          // head output, encoder input
inline constexpr const char* kCutEncoded = "bottleneck.encoded";      // encoder output, pre-quantization
inline constexpr const char* kCutQuantized = "bottleneck.quantized";  // after the STE node
inline constexpr const char* kCutDecoded = "bottleneck.decoded";      // decoder output

struct BottleneckSpec {
    std::string split_point_id;
    std::uint16_t channels = 0;  // C
    std::uint16_t height = 0;    // H
    std::uint16_t width = 0;     // W
    std::uint16_t reduced_channels = 0;  // C_r
    std::uint16_t stride = 1;            // S
    std::uint16_t kernel = kBottleneckKernel;
    // ablation switches; the unit is linear by default
    bool encoder_relu = false;
    bool decoder_relu = false;

    std::size_t reduced_height() const { return (height + stride - 1u) / stride; }
    std::size_t reduced_width() const { return (width + stride - 1u) / stride; }
    Shape input_shape() const { return Shape{channels, height, width}; }
    Shape code_shape() const { return Shape{reduced_channels, reduced_height(), reduced_width()}; }

    void validate() const {
        if (channels == 0 || height == 0 || width == 0) throw SpecError("bottleneck input dims must be >= 1");
        if (reduced_channels == 0 || reduced_channels > channels)
            throw SpecError("bottleneck channels C_r must be in [1, C] (C_r=" + std::to_string(reduced_channels) +
                            ", C=" + std::to_string(channels) + ")");
        if (stride < 1) throw SpecError("bottleneck stride must be >= 1");
        if (kernel != kBottleneckKernel) throw SpecError("bottleneck kernel is fixed at 3");
    }

    friend bool operator==(const BottleneckSpec&, const BottleneckSpec&) = default;
};

template <typename T = float>
struct TrainedBottleneck {
    BottleneckSpec spec;
    std::vector<nn::Layer<T>> encoder;  // dwsep conv (+ optional relu)
    std::vector<nn::Layer<T>> decoder;  // transposed dwsep conv
    std::uint8_t param_set_id = 0;
    HyperParams hyperparams_used;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : encoder) n += l.param_count();
        for (const auto& l : decoder) n += l.param_count();
        return n;
    }

    friend bool operator==(const TrainedBottleneck&, const TrainedBottleneck&) = default;
};

inline double compression_ratio(const BottleneckSpec& spec) {
    spec.validate();
    return static_cast<double>(spec.input_shape().numel()) / static_cast<double>(spec.code_shape().numel());
}

// Untrained unit: depthwise 3x3 stride-S conv + pointwise C -> C_r, and
// the mirror pointwise C_r -> C + transposed depthwise 3x3 stride-S conv
// whose output padding restores (C, H, W) exactly.
template <typename T = float>
TrainedBottleneck<T> build_bottleneck(const BottleneckSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    TrainedBottleneck<T> b;
    b.spec = spec;
    b.hyperparams_used.channels = spec.reduced_channels;
    b.hyperparams_used.stride = spec.stride;

    nn::LayerHyper enc;
    enc.in_channels = spec.channels;
    enc.out_channels = spec.reduced_channels;
    enc.kernel = spec.kernel;
    enc.stride = spec.stride;
    enc.pad = spec.kernel / 2;
    b.encoder.push_back(nn::make_layer<T>(nn::LayerKind::dwsep_conv2d, enc, rng, true));
    if (spec.encoder_relu) {
        auto r = nn::make_relu<T>();
        r.trainable = true;
        b.encoder.push_back(r);
    }

    nn::LayerHyper dec;
    dec.in_channels = spec.reduced_channels;
    dec.out_channels = spec.channels;
    dec.kernel = spec.kernel;
    dec.stride = spec.stride;
    dec.pad = spec.kernel / 2;
    // (H_r - 1) S - 2 pad + K + out_pad = H
    const std::size_t base_h = (spec.reduced_height() - 1) * spec.stride + spec.kernel - 2u * dec.pad;
    const std::size_t base_w = (spec.reduced_width() - 1) * spec.stride + spec.kernel - 2u * dec.pad;
    dec.out_pad_h = static_cast<std::uint16_t>(spec.height - base_h);
    dec.out_pad_w = static_cast<std::uint16_t>(spec.width - base_w);
    b.decoder.push_back(nn::make_layer<T>(nn::LayerKind::transposed_dwsep_conv2d, dec, rng, true));
    if (spec.decoder_relu) {
        auto r = nn::make_relu<T>();
        r.trainable = true;
        b.decoder.push_back(r);
    }
    return b;
}

namespace detail {

inline std::size_t boundary_offset(std::size_t b, std::size_t split, std::size_t added) {
    return b <= split ? b : b + added;
}

}  // namespace detail

// head | encoder | STE(Q) | decoder | tail. Base layers are frozen, the
// bottleneck's are trainable.
template <typename T>
nn::LayerGraph<T> insert(const nn::LayerGraph<T>& g, const TrainedBottleneck<T>& b) {
    const std::size_t split = g.boundary(b.spec.split_point_id);
    const Shape at = g.shape_at(split);
    if (at != b.spec.input_shape())
        throw SpecError("bottleneck expects " + b.spec.input_shape().str() + " at split point '" +
                        b.spec.split_point_id + "', graph has " + at.str());
    if (b.encoder.empty() || b.decoder.empty()) throw SpecError("bottleneck has no encoder or decoder");
    for (const char* reserved : {kCutInput, kCutEncoded, kCutQuantized, kCutDecoded})
        if (g.has_cut(reserved)) throw SpecError("graph already contains a bottleneck");

    nn::LayerGraph<T> out;
    out.input_shape = g.input_shape;
    auto frozen = [](nn::Layer<T> l) {
        l.trainable = false;
        return l;
    };
    auto trainable = [](nn::Layer<T> l) {
        l.trainable = true;
        return l;
    };
    for (std::size_t i = 0; i < split; ++i) out.layers.push_back(frozen(g.layers[i]));
    for (const auto& l : b.encoder) out.layers.push_back(trainable(l));
    const std::size_t encoded = out.layers.size();
    out.layers.push_back(nn::make_ste<T>(b.hyperparams_used.q));
    const std::size_t quantized = out.layers.size();
    for (const auto& l : b.decoder) out.layers.push_back(trainable(l));
    const std::size_t decoded = out.layers.size();
    for (std::size_t i = split; i < g.layers.size(); ++i) out.layers.push_back(frozen(g.layers[i]));

    const std::size_t added = decoded - split;
    for (const auto& c : g.cuts) out.cuts.push_back({c.name, detail::boundary_offset(c.boundary, split, added)});
    out.cuts.push_back({kCutInput, split});
    out.cuts.push_back({kCutEncoded, encoded});
    out.cuts.push_back({kCutQuantized, quantized});
    out.cuts.push_back({kCutDecoded, decoded});
    if (out.shape_at(decoded) != at) throw SpecError("bottleneck decoder does not restore the split dims");
    out.validate();
    return out;
}

// Encoder-only or decoder-only graphs on the feature tensor, for the two
// sides of the split runtime.
template <typename T>
nn::LayerGraph<T> encoder_graph(const TrainedBottleneck<T>& b) {
    nn::LayerGraph<T> g;
    g.input_shape = b.spec.input_shape();
    g.layers = b.encoder;
    g.validate();
    return g;
}

template <typename T>
nn::LayerGraph<T> decoder_graph(const TrainedBottleneck<T>& b) {
    nn::LayerGraph<T> g;
    g.input_shape = b.spec.code_shape();
    g.layers = b.decoder;
    g.validate();
    return g;
}

// Checkpoint: the SSWT layer container holding encoder then decoder
// layers, followed by the spec section:
//   u16 len + UTF-8 split_point_id, u16 C, H, W, C_r, S, u8 param_set_id,
//   u8 encoder layer count, u8 flags (bit0 = encoder relu, bit1 = decoder relu), f32 Q, f64 alpha.
// Client-side files carry only encoder layers, server-side only decoder
// layers; the spec section is identical.
enum class BottleneckPart { both, encoder, decoder };

template <typename T>
std::vector<std::uint8_t> serialize_bottleneck(const TrainedBottleneck<T>& b, BottleneckPart part = BottleneckPart::both) {
    std::vector<nn::Layer<T>> layers;
    if (part != BottleneckPart::decoder) layers.insert(layers.end(), b.encoder.begin(), b.encoder.end());
    const std::size_t enc_count = layers.size();
    if (part != BottleneckPart::encoder) layers.insert(layers.end(), b.decoder.begin(), b.decoder.end());
    ByteWriter w;
    nn::detail::write_layers(w, layers);
    w.string16(b.spec.split_point_id);
    for (std::uint16_t v : {b.spec.channels, b.spec.height, b.spec.width, b.spec.reduced_channels, b.spec.stride})
        w.u16le(v);
    w.u8(b.param_set_id);
    w.u8(static_cast<std::uint8_t>(enc_count));
    w.u8(static_cast<std::uint8_t>((b.spec.encoder_relu ? 1 : 0) | (b.spec.decoder_relu ? 2 : 0)));
    w.f32le(b.hyperparams_used.q);
    std::uint64_t bits;
    std::memcpy(&bits, &b.hyperparams_used.alpha, sizeof bits);
    w.u32le(static_cast<std::uint32_t>(bits));
    w.u32le(static_cast<std::uint32_t>(bits >> 32));
    return w.take();
}

template <typename T = float>
TrainedBottleneck<T> deserialize_bottleneck(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    auto layers = nn::detail::read_layers<T>(r);
    TrainedBottleneck<T> b;
    b.spec.split_point_id = r.string16();
    for (std::uint16_t* f : {&b.spec.channels, &b.spec.height, &b.spec.width, &b.spec.reduced_channels, &b.spec.stride})
        *f = r.u16le();
    b.param_set_id = r.u8();
    const std::size_t count_at = r.offset();
    const std::size_t enc_count = r.u8();
    if (enc_count > layers.size()) throw DecodeError("encoder layer count exceeds stored layers", count_at);
    const std::uint8_t flags = r.u8();
    b.spec.encoder_relu = (flags & 1) != 0;
    b.spec.decoder_relu = (flags & 2) != 0;
    b.hyperparams_used.q = r.f32le();
    std::uint64_t lo = r.u32le(), hi = r.u32le();
    std::uint64_t bits = lo | (hi << 32);
    std::memcpy(&b.hyperparams_used.alpha, &bits, sizeof bits);
    b.hyperparams_used.channels = b.spec.reduced_channels;
    b.hyperparams_used.stride = b.spec.stride;
    if (!r.at_end()) throw DecodeError("trailing bytes after bottleneck checkpoint", r.offset());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].trainable = true;
        (i < enc_count ? b.encoder : b.decoder).push_back(std::move(layers[i]));
    }
    try {
        b.spec.validate();
        if (!b.encoder.empty()) (void)encoder_graph(b);
        if (!b.decoder.empty()) (void)decoder_graph(b);
    } catch (const Error& e) {
        throw DecodeError(std::string("bottleneck checkpoint is inconsistent: ") + e.what(), 0);
    }
    return b;
}

}  // namespace splitnn
