#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitnn/bytes.hpp"
#include "splitnn/error.hpp"
#include "splitnn/nn/graph.hpp"

// Binary weight container, little-endian throughout:
//
//   "SSWT"  u16 version  u16 layer_count
//   per layer: u8 kind, u16 x7 hyper (in, out, kernel, stride, pad,
//              out_pad_h, out_pad_w), then for every parameter tensor of
//              that kind: u32 element count + raw f32 values.
//              ste_quantize stores one blob holding its step.
//
// A graph checkpoint appends: u16 rank, u16 dims[rank] (per-sample input
// shape), u16 cut_count, per cut: u16 name length + UTF-8, u16 boundary.
namespace splitnn::nn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void check_u16(std::size_t v, const char* what) {
    if (v > 0xFFFF) throw RangeError(std::string(what) + " does not fit in u16");
}

template <typename T>
void write_layers(ByteWriter& w, const std::vector<Layer<T>>& layers) {
    w.str("SSWT");
    w.u16le(kCheckpointVersion);
    check_u16(layers.size(), "layer count");
    w.u16le(static_cast<std::uint16_t>(layers.size()));
    for (const auto& l : layers) {
        w.u8(static_cast<std::uint8_t>(l.kind));
        const auto& h = l.hyper;
        for (std::uint16_t v : {h.in_channels, h.out_channels, h.kernel, h.stride, h.pad, h.out_pad_h, h.out_pad_w})
            w.u16le(v);
        if (l.kind == LayerKind::ste_quantize) {
            w.u32le(1);
            w.f32le(l.quant_step);
            continue;
        }
        for (const auto& p : l.params) {
            w.u32le(static_cast<std::uint32_t>(p.numel()));
            for (T v : p.data()) w.f32le(static_cast<float>(v));
        }
    }
}

template <typename T>
std::vector<Layer<T>> read_layers(ByteReader& r) {
    r.expect_magic("SSWT");
    const std::size_t at = r.offset();
    const std::uint16_t version = r.u16le();
    if (version != kCheckpointVersion) throw DecodeError("unsupported checkpoint version " + std::to_string(version), at);
    const std::uint16_t count = r.u16le();
    std::vector<Layer<T>> layers;
    layers.reserve(count);
    for (std::uint16_t i = 0; i < count; ++i) {
        const std::size_t kind_at = r.offset();
        const std::uint8_t kind = r.u8();
        if (!valid_kind(kind)) throw DecodeError("unknown layer kind " + std::to_string(kind), kind_at);
        Layer<T> l;
        l.kind = static_cast<LayerKind>(kind);
        auto& h = l.hyper;
        for (std::uint16_t* f : {&h.in_channels, &h.out_channels, &h.kernel, &h.stride, &h.pad, &h.out_pad_h,
                                 &h.out_pad_w})
            *f = r.u16le();
        if (l.kind == LayerKind::ste_quantize) {
            const std::size_t blob_at = r.offset();
            if (r.u32le() != 1) throw DecodeError("ste_quantize blob must hold one value", blob_at);
            l.quant_step = r.f32le();
            if (!(l.quant_step > 0.0f)) throw DecodeError("non-positive quantization step", blob_at);
            layers.push_back(std::move(l));
            continue;
        }
        for (const Shape& s : param_shapes<T>(l.kind, h)) {
            const std::size_t blob_at = r.offset();
            const std::uint32_t n = r.u32le();
            if (n != s.numel())
                throw DecodeError("parameter blob length " + std::to_string(n) + " does not match shape " + s.str(),
                                  blob_at);
            Tensor<T> p(s);
            for (auto& v : p.data()) v = static_cast<T>(r.f32le());
            l.params.push_back(std::move(p));
        }
        layers.push_back(std::move(l));
    }
    return layers;
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> serialize_graph(const LayerGraph<T>& g) {
    ByteWriter w;
    detail::write_layers(w, g.layers);
    w.u16le(static_cast<std::uint16_t>(g.input_shape.rank()));
    for (std::size_t d : g.input_shape.dims()) {
        detail::check_u16(d, "input dimension");
        w.u16le(static_cast<std::uint16_t>(d));
    }
    w.u16le(static_cast<std::uint16_t>(g.cuts.size()));
    for (const auto& c : g.cuts) {
        w.string16(c.name);
        w.u16le(static_cast<std::uint16_t>(c.boundary));
    }
    return w.take();
}

// Loaded layers come back frozen.
template <typename T>
LayerGraph<T> deserialize_graph(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    LayerGraph<T> g;
    g.layers = detail::read_layers<T>(r);
    const std::size_t rank_at = r.offset();
    const std::uint16_t rank = r.u16le();
    if (rank == 0) throw DecodeError("input shape has rank 0", rank_at);
    std::vector<std::size_t> dims;
    for (std::uint16_t i = 0; i < rank; ++i) {
        const std::size_t at = r.offset();
        std::uint16_t d = r.u16le();
        if (d == 0) throw DecodeError("zero input dimension", at);
        dims.push_back(d);
    }
    g.input_shape = Shape(dims);
    const std::uint16_t cuts = r.u16le();
    for (std::uint16_t i = 0; i < cuts; ++i) {
        std::string name = r.string16();
        const std::size_t at = r.offset();
        std::uint16_t b = r.u16le();
        if (b > g.layers.size()) throw DecodeError("cut point beyond last layer", at);
        g.cuts.push_back({std::move(name), b});
    }
    if (!r.at_end()) throw DecodeError("trailing bytes after checkpoint", r.offset());
    try {
        g.validate();
    } catch (const Error& e) {
        throw DecodeError(std::string("checkpoint describes an invalid graph: ") + e.what(), 0);
    }
    return g;
}

template <typename T>
void save_graph(const LayerGraph<T>& g, const std::string& path) {
    write_file(path, serialize_graph(g));
}

template <typename T = float>
LayerGraph<T> load_graph(const std::string& path) {
    return deserialize_graph<T>(read_file(path));
}

}  // namespace splitnn::nn
