#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "splitnn/error.hpp"
#include "splitnn/nn/graph.hpp"
#include "splitnn/nn/layer.hpp"
#include "splitnn/nn/loss.hpp"
#include "splitnn/nn/optimizer.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn::nn {

// Layer-by-layer description of the base network. Tokens:
//   conv:C[:K[:S]]   3x3 (or KxK) same-padded convolution to C channels
//   relu
//   maxpool:K[:S]    avgpool:K[:S]
//   fc:N | fc:classes
//   @name            named cut point at the current boundary
inline constexpr const char* kDefaultTopology =
    "conv:8 relu maxpool:2 @block1 conv:16 relu maxpool:2 @block2 conv:32 relu @block3 maxpool:2 @pool3 "
    "fc:512 relu @fc1 fc:classes";

struct ToyConfig {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t classes = 8;
    std::size_t train_samples = 8000;
    std::size_t eval_samples = 2000;
    double noise = 0.15;
    std::string topology = kDefaultTopology;

    void validate() const {
        if (image_size < 8 || image_size > 512) throw ConfigError("image_size must be in [8, 512]");
        if (channels < 1 || channels > 16) throw ConfigError("channels must be in [1, 16]");
        if (classes < 2 || classes > 8) throw ConfigError("classes must be in [2, 8]");
        if (train_samples < classes || eval_samples < classes)
            throw ConfigError("each split needs at least one sample per class");
        if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be a finite value >= 0");
    }
};

struct LabelledImages {
    Tensor<float> images;  // (N, C, H, W)
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }

    // Samples [begin, begin + count) as a batch.
    Tensor<float> batch(std::size_t begin, std::size_t count) const {
        const auto& d = images.shape().dims();
        const std::size_t per = images.numel() / d[0];
        auto first = images.data().begin() + static_cast<std::ptrdiff_t>(begin * per);
        return Tensor<float>(Shape{count, d[1], d[2], d[3]},
                             std::vector<float>(first, first + static_cast<std::ptrdiff_t>(count * per)));
    }
};

struct ToyDataset {
    LabelledImages train;
    LabelledImages eval;
};

namespace detail {

// Pattern mask in [0,1] for class `cls` at pixel (y, x).
struct PatternParams {
    int cls = 0;
    double period = 6, phase = 0;
    double cy = 16, cx = 16, r = 8, thick = 2, hh = 6, hw = 6;
};

inline double pattern_mask(const PatternParams& p, double y, double x) {
    auto band = [&](double v) { return std::fmod(std::floor((v + p.phase) / (p.period / 2.0)), 2.0) == 0.0 ? 1.0 : 0.0; };
    const double dy = y - p.cy, dx = x - p.cx;
    switch (p.cls) {
        case 0: return band(y);        // horizontal stripes
        case 1: return band(x);        // vertical stripes
        case 2: return band(x + y);    // diagonal stripes
        case 3: {                      // checkerboard
            const double a = std::floor((y + p.phase) / p.period), b = std::floor((x + p.phase) / p.period);
            return std::fmod(a + b, 2.0) == 0.0 ? 1.0 : 0.0;
        }
        case 4: return dy * dy + dx * dx <= p.r * p.r ? 1.0 : 0.0;  // disk
        case 5: return std::abs(dy) <= p.hh && std::abs(dx) <= p.hw ? 1.0 : 0.0;  // rectangle
        case 6:  // plus sign
            return (std::abs(dy) <= p.thick && std::abs(dx) <= p.r) || (std::abs(dx) <= p.thick && std::abs(dy) <= p.r)
                       ? 1.0
                       : 0.0;
        case 7: {  // ring
            const double d = std::sqrt(dy * dy + dx * dx);
            return std::abs(d - p.r) <= p.thick ? 1.0 : 0.0;
        }
    }
    return 0.0;
}

inline LabelledImages generate_split(const ToyConfig& cfg, std::size_t count, std::mt19937_64& rng) {
    const std::size_t s = cfg.image_size, c = cfg.channels;
    const double scale = static_cast<double>(s) / 32.0;
    LabelledImages out{Tensor<float>(Shape{count, c, s, s}), std::vector<int>(count)};
    for (std::size_t i = 0; i < count; ++i) out.labels[i] = static_cast<int>(i % cfg.classes);
    std::shuffle(out.labels.begin(), out.labels.end(), rng);

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, cfg.noise);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    std::vector<double> bg(c), fg(c);
    for (std::size_t i = 0; i < count; ++i) {
        PatternParams p;
        p.cls = out.labels[i];
        p.period = uni(4.0, 9.0) * scale;
        p.phase = uni(0.0, p.period);
        if (p.cls == 3) p.period = uni(3.0, 6.0) * scale;
        p.cy = uni(10.0, 22.0) * scale;
        p.cx = uni(10.0, 22.0) * scale;
        p.r = uni(6.0, 10.0) * scale;
        p.thick = uni(1.5, 3.0) * scale;
        p.hh = uni(4.0, 9.0) * scale;
        p.hw = uni(4.0, 9.0) * scale;
        double contrast = 0.0;
        do {
            contrast = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                bg[ch] = uni(-1.0, 1.0);
                fg[ch] = uni(-1.0, 1.0);
                contrast += std::abs(fg[ch] - bg[ch]);
            }
        } while (contrast / static_cast<double>(c) < 0.6);

        float* img = out.images.data().data() + i * c * s * s;
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const double m = pattern_mask(p, static_cast<double>(y), static_cast<double>(x));
                for (std::size_t ch = 0; ch < c; ++ch)
                    img[(ch * s + y) * s + x] = static_cast<float>(bg[ch] + (fg[ch] - bg[ch]) * m + noise(rng));
            }
    }
    return out;
}

}  // namespace detail

// Deterministic synthetic classification data: one geometric pattern
// family per class, random placement and colours, additive Gaussian noise.
inline ToyDataset generate_dataset(const ToyConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ToyDataset ds;
    ds.train = detail::generate_split(cfg, cfg.train_samples, rng);
    ds.eval = detail::generate_split(cfg, cfg.eval_samples, rng);
    return ds;
}

namespace detail {

inline std::uint16_t parse_u16(const std::string& tok, const std::string& field) {
    try {
        std::size_t used = 0;
        long v = std::stol(field, &used);
        if (used != field.size() || v < 1 || v > 0xFFFF) throw ConfigError("");
        return static_cast<std::uint16_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("bad number in topology token '" + tok + "'");
    }
}

inline std::vector<std::string> split_fields(const std::string& tok) {
    std::vector<std::string> f;
    std::stringstream ss(tok);
    std::string part;
    while (std::getline(ss, part, ':')) f.push_back(part);
    return f;
}

}  // namespace detail

// Builds the (untrained, frozen-flagged) base network from a topology
// string. Randomly initialised; train it with train_classifier().
template <typename T = float>
LayerGraph<T> build_toy_base_model(const ToyConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    LayerGraph<T> g;
    g.input_shape = Shape{cfg.channels, cfg.image_size, cfg.image_size};
    Shape cur = g.input_shape;
    std::stringstream ss(cfg.topology);
    std::string tok;
    while (ss >> tok) {
        if (tok[0] == '@') {
            if (tok.size() < 2) throw ConfigError("empty cut point name in topology");
            if (g.has_cut(tok.substr(1))) throw ConfigError("duplicate cut point '" + tok.substr(1) + "'");
            g.add_cut(tok.substr(1));
            continue;
        }
        auto f = detail::split_fields(tok);
        Layer<T> l;
        if (f[0] == "conv") {
            if (f.size() < 2 || f.size() > 4) throw ConfigError("conv token needs conv:C[:K[:S]]: '" + tok + "'");
            LayerHyper h;
            if (cur.rank() != 3) throw ConfigError("conv after a flattening layer: '" + tok + "'");
            h.in_channels = static_cast<std::uint16_t>(cur[0]);
            h.out_channels = detail::parse_u16(tok, f[1]);
            h.kernel = f.size() > 2 ? detail::parse_u16(tok, f[2]) : 3;
            h.stride = f.size() > 3 ? detail::parse_u16(tok, f[3]) : 1;
            h.pad = static_cast<std::uint16_t>(h.kernel / 2);
            l = make_layer<T>(LayerKind::conv2d, h, rng);
        } else if (f[0] == "relu" && f.size() == 1) {
            l = make_relu<T>();
        } else if (f[0] == "maxpool" || f[0] == "avgpool") {
            if (f.size() < 2 || f.size() > 3) throw ConfigError("pool token needs pool:K[:S]: '" + tok + "'");
            const auto k = detail::parse_u16(tok, f[1]);
            const auto s = f.size() > 2 ? detail::parse_u16(tok, f[2]) : k;
            l = make_pool<T>(f[0] == "maxpool" ? LayerKind::maxpool : LayerKind::avgpool, k, s);
        } else if (f[0] == "fc") {
            if (f.size() != 2) throw ConfigError("fc token needs fc:N: '" + tok + "'");
            LayerHyper h;
            if (cur.numel() > 0xFFFF) throw ConfigError("fc input too wide: '" + tok + "'");
            h.in_channels = static_cast<std::uint16_t>(cur.numel());
            h.out_channels = f[1] == "classes" ? static_cast<std::uint16_t>(cfg.classes) : detail::parse_u16(tok, f[1]);
            l = make_layer<T>(LayerKind::fully_connected, h, rng);
        } else {
            throw ConfigError("unknown topology token '" + tok + "'");
        }
        try {
            cur = output_shape(l, cur);
        } catch (const ShapeError& e) {
            throw ConfigError("topology token '" + tok + "': " + e.what());
        }
        g.layers.push_back(std::move(l));
    }
    if (g.layers.empty()) throw ConfigError("topology has no layers");
    if (cur.numel() != cfg.classes) throw ConfigError("topology output does not match the class count");
    g.validate();
    return g;
}

struct ClassifierTrainConfig {
    std::size_t epochs = 8;
    std::size_t batch_size = 64;
    AdamConfig adam;
    std::uint64_t seed = 1;
};

template <typename T>
double accuracy(const LayerGraph<T>& g, const LabelledImages& data, std::size_t batch = 250) {
    std::size_t correct = 0;
    for (std::size_t b = 0; b < data.size(); b += batch) {
        const std::size_t n = std::min(batch, data.size() - b);
        auto pred = argmax_rows(forward(g, data.batch(b, n).template cast<T>(), std::size_t{0}, g.size()));
        for (std::size_t i = 0; i < n; ++i) correct += pred[i] == data.labels[b + i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Stand-alone training of every layer of `g` with softmax cross-entropy.
// Layers are marked frozen again on return.
template <typename T, typename EpochFn>
void train_classifier(LayerGraph<T>& g, const LabelledImages& train, const ClassifierTrainConfig& cfg,
                      EpochFn&& on_epoch) {
    for (auto& l : g.layers) l.trainable = !l.params.empty();
    AdamState<T> state;
    state.cfg = cfg.adam;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    const auto& d = train.images.shape().dims();
    const std::size_t per = train.images.numel() / d[0];
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - b);
            Tensor<T> x(Shape{n, d[1], d[2], d[3]});
            std::vector<int> y(n);
            for (std::size_t i = 0; i < n; ++i) {
                const float* src = train.images.data().data() + order[b + i] * per;
                std::copy(src, src + per, x.data().data() + i * per);
                y[i] = train.labels[order[b + i]];
            }
            auto [logits, tape] = forward_train(g, x, 0, g.size());
            auto lg = softmax_cross_entropy(logits, y);
            if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss while training the base model");
            tape = backward(g, std::move(tape), lg.grad, {}, BackwardOptions{false});
            optimizer_step(g, tape, state);
            loss_sum += lg.loss;
            ++batches;
        }
        on_epoch(epoch, loss_sum / static_cast<double>(batches));
    }
    for (auto& l : g.layers) l.trainable = false;
}

template <typename T>
void train_classifier(LayerGraph<T>& g, const LabelledImages& train, const ClassifierTrainConfig& cfg) {
    train_classifier(g, train, cfg, [](std::size_t, double) {});
}

}  // namespace splitnn::nn
