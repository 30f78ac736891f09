#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitnn/bottleneck.hpp"
#include "splitnn/codec/feature.hpp"
#include "splitnn/nn/graph.hpp"
#include "splitnn/quantizer.hpp"

namespace splitnn {

// Layers [from, to) of `g` as a stand-alone graph. Cuts inside the range
// are kept, re-based.
template <typename T>
nn::LayerGraph<T> subgraph(const nn::LayerGraph<T>& g, std::size_t from, std::size_t to) {
    if (from > to || to > g.size()) throw ShapeError("subgraph range out of bounds");
    nn::LayerGraph<T> out;
    out.input_shape = g.shape_at(from);
    out.layers.assign(g.layers.begin() + static_cast<std::ptrdiff_t>(from),
                      g.layers.begin() + static_cast<std::ptrdiff_t>(to));
    for (const auto& c : g.cuts)
        if (c.boundary >= from && c.boundary <= to) out.cuts.push_back({c.name, c.boundary - from});
    return out;
}

// The four pieces of a split model with a bottleneck, each runnable on
// its own: head and encoder on the device, decoder and tail on the server.
template <typename T = float>
struct SplitModel {
    nn::LayerGraph<T> head;
    nn::LayerGraph<T> encoder;
    nn::LayerGraph<T> decoder;
    nn::LayerGraph<T> tail;
    float q = 1.0f;
    std::uint8_t param_set_id = 0;
};

template <typename T>
SplitModel<T> split_model(const nn::LayerGraph<T>& base, const TrainedBottleneck<T>& b) {
    const std::size_t split = base.boundary(b.spec.split_point_id);
    SplitModel<T> m;
    m.head = subgraph(base, 0, split);
    m.tail = subgraph(base, split, base.size());
    m.encoder = encoder_graph(b);
    m.decoder = decoder_graph(b);
    m.q = b.hyperparams_used.q;
    m.param_set_id = b.param_set_id;
    return m;
}

// The same four pieces taken out of an inserted graph, i.e. whatever the
// trainer is currently optimising.
template <typename T>
SplitModel<T> split_model(const nn::LayerGraph<T>& inserted, float q, std::uint8_t param_set_id = 0) {
    const std::size_t split = inserted.boundary(kCutInput);
    const std::size_t enc = inserted.boundary(kCutEncoded);
    const std::size_t quant = inserted.boundary(kCutQuantized);
    const std::size_t dec = inserted.boundary(kCutDecoded);
    SplitModel<T> m;
    m.head = subgraph(inserted, 0, split);
    m.encoder = subgraph(inserted, split, enc);
    m.decoder = subgraph(inserted, quant, dec);
    m.tail = subgraph(inserted, dec, inserted.size());
    m.q = q;
    m.param_set_id = param_set_id;
    return m;
}

// Device side for one sample: encoder output -> quantize -> Huffman.
// `feature` is the head output shaped (C, H, W) or (1, C, H, W).
template <typename T>
codec::CompressedFeature compress_feature(const SplitModel<T>& m, const Tensor<T>& feature,
                                          const codec::FeatureMeta& meta) {
    Tensor<T> x = feature.shape().rank() == 3
                      ? reshape(feature, nn::detail::batched(1, feature.shape()))
                      : feature;
    if (x.shape()[0] != 1) throw ShapeError("compress_feature takes a single sample");
    Tensor<T> z = nn::forward(m.encoder, x, std::size_t{0}, m.encoder.size());
    return codec::encode(quantize(slice_batch(z, 0), QuantParams{m.q}), QuantParams{m.q}, meta);
}

// Server side: tensor the decoder consumes, reconstructed from the bitstream.
template <typename T = float>
Tensor<T> reconstruct(const codec::CompressedFeature& c) {
    return dequantize<T>(codec::decode(c), QuantParams{c.q});
}

// Decoder + tail on a batch of reconstructed codes (N, C_r, H_r, W_r).
template <typename T>
Tensor<T> tail_logits(const SplitModel<T>& m, const Tensor<T>& codes) {
    Tensor<T> h = nn::forward(m.decoder, codes, std::size_t{0}, m.decoder.size());
    Tensor<T> y = nn::forward(m.tail, h, std::size_t{0}, m.tail.size());
    const Shape flat{y.shape()[0], y.numel() / y.shape()[0]};
    return reshape(std::move(y), flat);
}

}  // namespace splitnn
