#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitnn/bottleneck.hpp"
#include "splitnn/error.hpp"
#include "splitnn/hyperparams.hpp"
#include "splitnn/nn/graph.hpp"
#include "splitnn/nn/loss.hpp"
#include "splitnn/nn/optimizer.hpp"
#include "splitnn/nn/toy.hpp"
#include "splitnn/pipeline.hpp"

namespace splitnn {

struct TrainConfig {
    double alpha = 0.1;
    float q = 1.0f;
    std::size_t epochs = 15;
    std::size_t epoch_cap = 100;
    std::size_t batch_size = 64;
    nn::AdamConfig adam{1e-2};
    std::uint64_t seed = 1;
    bool train_all = false;  // fine-tune head and tail too
    bool eval_each_epoch = true;
    bool cosine_lr = true;  // decay lr to 0 over the run

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value > 0");
        if (!(q > 0.0f) || !std::isfinite(q)) throw ConfigError("Q must be a finite value > 0");
        if (epochs < 1 || epochs > epoch_cap)
            throw ConfigError("epochs must be in [1, " + std::to_string(epoch_cap) + "]");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be > 0");
    }
};

// ---- loss ------------------------------------------------------------------

template <typename T>
struct LossTerms {
    double total = 0.0;  // L
    double rate = 0.0;   // L_r
    double task = 0.0;   // L_t
    Tensor<T> rate_grad;  // dL/dz_enc from the rate term
    Tensor<T> task_grad;  // dL/dlogits, already scaled by alpha
};

// L = mean|z_enc| + alpha * cross_entropy(logits, labels).
template <typename T>
LossTerms<T> compute_loss(const Tensor<T>& z_enc, const Tensor<T>& logits, std::span<const int> labels,
                          double alpha) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
    auto r = nn::mean_abs(z_enc);
    auto t = nn::softmax_cross_entropy(logits, labels);
    LossTerms<T> out;
    out.rate = r.loss;
    out.task = t.loss;
    out.total = r.loss + alpha * t.loss;
    if (!std::isfinite(out.total) || !std::isfinite(out.rate) || !std::isfinite(out.task))
        throw NumericError("non-finite loss (L_r=" + std::to_string(out.rate) + ", L_t=" + std::to_string(out.task) +
                           ")");
    out.rate_grad = std::move(r.grad);
    out.task_grad = scale(t.grad, static_cast<T>(alpha));
    return out;
}

// ---- data ------------------------------------------------------------------

// Head outputs for a labelled image set, computed once and shared by all
// trials at the same split point.
struct HeadFeatures {
    Tensor<float> features;  // (N, C, H, W)
    std::vector<int> labels;
    std::uint16_t image_height = 0;
    std::uint16_t image_width = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t per_sample() const { return features.numel() / features.shape()[0]; }
};

inline HeadFeatures compute_head_features(const nn::LayerGraph<float>& base, const std::string& split_point,
                                          const nn::LabelledImages& data, std::size_t batch = 250) {
    if (data.size() == 0) throw InputError("empty image set");
    const std::size_t split = base.boundary(split_point);
    const auto& d = data.images.shape().dims();
    HeadFeatures out;
    out.labels = data.labels;
    out.image_height = static_cast<std::uint16_t>(d[2]);
    out.image_width = static_cast<std::uint16_t>(d[3]);
    std::vector<std::size_t> dims{data.size()};
    const Shape fs = base.shape_at(split);
    dims.insert(dims.end(), fs.dims().begin(), fs.dims().end());
    out.features = Tensor<float>(Shape(dims));
    const std::size_t per = fs.numel();
    for (std::size_t b = 0; b < data.size(); b += batch) {
        const std::size_t n = std::min(batch, data.size() - b);
        auto f = nn::forward(base, data.batch(b, n), std::size_t{0}, split);
        std::copy(f.data().begin(), f.data().end(), out.features.data().begin() + static_cast<std::ptrdiff_t>(b * per));
    }
    return out;
}

struct SplitData {
    HeadFeatures train;
    HeadFeatures eval;
    // only needed with train_all, where the head changes during training
    const nn::LabelledImages* train_images = nullptr;
    const nn::LabelledImages* eval_images = nullptr;
};

inline SplitData prepare_split_data(const nn::LayerGraph<float>& base, const std::string& split_point,
                                    const nn::ToyDataset& ds) {
    return {compute_head_features(base, split_point, ds.train), compute_head_features(base, split_point, ds.eval),
            &ds.train, &ds.eval};
}

// ---- evaluation ------------------------------------------------------------

struct OperatingPoint {
    double bpp = 0.0;
    double metric = 0.0;
    HyperParams hyperparams;
    std::string checkpoint_ref;

    friend bool operator==(const OperatingPoint&, const OperatingPoint&) = default;
};

struct EvalDetail {
    std::vector<double> sample_bpp;
    std::vector<std::uint64_t> payload_bits;
    std::vector<std::vector<std::uint8_t>> bitstreams;  // filled only when keep_bitstreams
    std::vector<int> predictions;
};

// Accuracy and mean bpp with every sample going through the real codec:
// encoder -> quantize -> Huffman -> bytes -> parse -> decode -> dequantize
// -> decoder -> tail.
inline OperatingPoint evaluate(const SplitModel<float>& m, const HeadFeatures& eval, const HyperParams& hp,
                               EvalDetail* detail = nullptr, bool keep_bitstreams = false,
                               std::size_t batch = 250) {
    if (eval.size() == 0) throw InputError("empty evaluation set");
    const codec::FeatureMeta meta{m.param_set_id, eval.image_height, eval.image_width};
    const std::size_t per = eval.per_sample();
    const auto& fd = eval.features.shape().dims();
    double bpp_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < eval.size(); b += batch) {
        const std::size_t n = std::min(batch, eval.size() - b);
        std::vector<Tensor<float>> codes;
        codes.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto first = eval.features.data().begin() + static_cast<std::ptrdiff_t>((b + i) * per);
            Tensor<float> f(Shape{1, fd[1], fd[2], fd[3]}, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(per)));
            const auto c = compress_feature(m, f, meta);
            const auto bytes = codec::serialize(c);
            const double bpp = codec::bits_to_bpp(bytes.size() * 8u, eval.image_height, eval.image_width);
            bpp_sum += bpp;
            codes.push_back(reconstruct<float>(codec::parse(bytes)));
            if (detail) {
                detail->sample_bpp.push_back(bpp);
                detail->payload_bits.push_back(c.payload_bit_count);
                if (keep_bitstreams) detail->bitstreams.push_back(bytes);
            }
        }
        const auto pred = nn::argmax_rows(tail_logits(m, stack<float>(codes)));
        for (std::size_t i = 0; i < n; ++i) {
            correct += pred[i] == eval.labels[b + i];
            if (detail) detail->predictions.push_back(pred[i]);
        }
    }
    OperatingPoint op;
    op.bpp = bpp_sum / static_cast<double>(eval.size());
    op.metric = static_cast<double>(correct) / static_cast<double>(eval.size());
    op.hyperparams = hp;
    return op;
}

// ---- training --------------------------------------------------------------

struct EpochRecord {
    std::int64_t trial_id = -1;
    std::size_t epoch = 0;
    double loss = 0.0;        // L
    double rate_loss = 0.0;   // L_r
    double task_loss = 0.0;   // L_t
    double eval_metric = 0.0;
    double mean_bpp = 0.0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
    return {{"trial_id", r.trial_id}, {"epoch", r.epoch},           {"L", r.loss},
            {"L_r", r.rate_loss},    {"L_t", r.task_loss},          {"eval_metric", r.eval_metric},
            {"mean_bpp", r.mean_bpp}};
}

struct TrainResult {
    TrainedBottleneck<float> bottleneck;
    nn::LayerGraph<float> pipeline;  // head | bottleneck | tail as trained
    std::vector<EpochRecord> log;
};

// Spec for a bottleneck at a named split point of `base`.
inline BottleneckSpec spec_at(const nn::LayerGraph<float>& base, const std::string& split_point,
                              std::uint16_t reduced_channels, std::uint16_t stride) {
    const Shape at = base.shape_at(base.boundary(split_point));
    if (at.rank() != 3) throw SpecError("split point must carry a (C, H, W) feature");
    BottleneckSpec spec;
    spec.split_point_id = split_point;
    spec.channels = static_cast<std::uint16_t>(at[0]);
    spec.height = static_cast<std::uint16_t>(at[1]);
    spec.width = static_cast<std::uint16_t>(at[2]);
    spec.reduced_channels = reduced_channels;
    spec.stride = stride;
    return spec;
}

// Trains the bottleneck inserted at `spec.split_point_id` on L. Base layers
// stay frozen unless cfg.train_all; gradients still flow through the tail.
inline TrainResult train_bottleneck(const nn::LayerGraph<float>& base, BottleneckSpec spec, const TrainConfig& cfg,
                                    const SplitData& data, std::int64_t trial_id = -1,
                                    std::ostream* log = nullptr,
                                    const TrainedBottleneck<float>* warm_start = nullptr) {
    cfg.validate();
    if (cfg.train_all && (!data.train_images || !data.eval_images))
        throw InputError("train_all needs the raw training and evaluation images");
    if (data.train.size() == 0) throw InputError("empty training set");

    TrainedBottleneck<float> init = build_bottleneck<float>(spec, cfg.seed);
    if (warm_start) {
        if (!(warm_start->spec == spec)) throw SpecError("warm start bottleneck has a different spec");
        init.encoder = warm_start->encoder;
        init.decoder = warm_start->decoder;
    }
    init.hyperparams_used = {spec.reduced_channels, spec.stride, cfg.alpha, cfg.q};
    TrainResult res;
    res.pipeline = insert(base, init);
    auto& g = res.pipeline;
    const std::size_t split = g.boundary(kCutInput);
    const std::size_t encoded = g.boundary(kCutEncoded);
    const std::size_t quantized = g.boundary(kCutQuantized);
    const std::size_t decoded = g.boundary(kCutDecoded);
    if (cfg.train_all)
        for (auto& l : g.layers) l.trainable = !l.params.empty() || l.trainable;

    nn::AdamState<float> state;
    state.cfg = cfg.adam;
    std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
    const std::size_t count = data.train.size();
    std::vector<std::size_t> order(count);
    const std::size_t from = cfg.train_all ? 0 : split;
    const Tensor<float>& src = cfg.train_all ? data.train_images->images : data.train.features;
    const std::size_t per = src.numel() / src.shape()[0];
    std::vector<std::size_t> sample_dims(src.shape().dims().begin() + 1, src.shape().dims().end());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < count; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        double sum_l = 0.0, sum_r = 0.0, sum_t = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < count; b += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, count - b);
            std::vector<std::size_t> dims{n};
            dims.insert(dims.end(), sample_dims.begin(), sample_dims.end());
            Tensor<float> x{Shape(dims)};
            std::vector<int> y(n);
            for (std::size_t i = 0; i < n; ++i) {
                const float* s = src.data().data() + order[b + i] * per;
                std::copy(s, s + per, x.data().data() + i * per);
                y[i] = data.train.labels[order[b + i]];
            }
            if (cfg.cosine_lr) {
                const double t = static_cast<double>(epoch * count + b) / static_cast<double>(cfg.epochs * count);
                state.cfg.lr = 0.5 * cfg.adam.lr * (1.0 + std::cos(3.14159265358979323846 * t));
            }
            auto [logits, tape] = nn::forward_train(g, x, from, g.size());
            const Tensor<float>& z_enc = tape.inputs[encoded - from];
            auto terms = compute_loss(z_enc, reshape(logits, Shape{n, logits.numel() / n}), y, cfg.alpha);
            std::map<std::size_t, Tensor<float>> inject;
            inject.emplace(encoded, std::move(terms.rate_grad));
            tape = nn::backward(g, std::move(tape), reshape(std::move(terms.task_grad), logits.shape()), inject,
                                nn::BackwardOptions{false});
            nn::optimizer_step(g, tape, state);
            sum_l += terms.total;
            sum_r += terms.rate;
            sum_t += terms.task;
            ++batches;
        }
        EpochRecord rec;
        rec.trial_id = trial_id;
        rec.epoch = epoch + 1;
        rec.rate_loss = sum_r / static_cast<double>(batches);
        rec.task_loss = sum_t / static_cast<double>(batches);
        rec.loss = sum_l / static_cast<double>(batches);
        for (const auto& l : g.layers)
            for (const auto& p : l.params)
                if (!p.all_finite()) throw NumericError("non-finite weights after epoch " + std::to_string(epoch + 1));
        if (cfg.eval_each_epoch || epoch + 1 == cfg.epochs) {
            const auto op = cfg.train_all
                                ? evaluate(split_model(g, cfg.q), compute_head_features(g, kCutInput, *data.eval_images),
                                           init.hyperparams_used)
                                : evaluate(split_model(g, cfg.q), data.eval, init.hyperparams_used);
            rec.eval_metric = op.metric;
            rec.mean_bpp = op.bpp;
        }
        if (log) *log << to_json(rec).dump() << '\n' << std::flush;
        res.log.push_back(rec);
    }
    if (cfg.train_all)
        for (std::size_t i = 0; i < g.size(); ++i) g.layers[i].trainable = i >= split && i < decoded;

    res.bottleneck = init;
    res.bottleneck.encoder.assign(g.layers.begin() + static_cast<std::ptrdiff_t>(split),
                                  g.layers.begin() + static_cast<std::ptrdiff_t>(encoded));
    res.bottleneck.decoder.assign(g.layers.begin() + static_cast<std::ptrdiff_t>(quantized),
                                  g.layers.begin() + static_cast<std::ptrdiff_t>(decoded));
    return res;
}

}  // namespace splitnn
