#pragma once

// Central-difference gradient checking in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "splitnn/bottleneck.hpp"
#include "splitnn/nn/graph.hpp"
#include "splitnn/trainer.hpp"

namespace gradcheck {

using splitnn::Shape;
using splitnn::Tensor;
using Graph = splitnn::nn::LayerGraph<double>;
namespace nn = splitnn::nn;

inline constexpr double kEps = 1e-5;
// Below this magnitude a gradient is compared absolutely.
inline constexpr double kFloor = 1e-6;

struct Result {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::string worst;  // where max_rel happened
};

inline double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kFloor}); }

inline void note(Result& r, double a, double n, const std::string& where) {
    const double e = rel_error(a, n);
    ++r.checked;
    if (e > r.max_rel) {
        r.max_rel = e;
        r.worst = where + " analytic=" + std::to_string(a) + " numeric=" + std::to_string(n);
    }
}

inline Tensor<double> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<double> t(s);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

// Pushes values away from zero so kinks (ReLU, |z|) are not straddled.
inline void avoid_zero(Tensor<double>& t, double margin = 1e-2) {
    for (auto& v : t.data())
        if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
}

// f = sum(w * g(x)); differentiates w.r.t. every parameter and input element.
inline Result check_graph(Graph& g, Tensor<double> x, std::mt19937_64& rng) {
    for (auto& l : g.layers) l.trainable = !l.params.empty();
    const Tensor<double> y0 = nn::forward(g, x, std::size_t{0}, g.size());
    const Tensor<double> w = random_tensor(y0.shape(), rng);
    auto f = [&](const Tensor<double>& in) {
        const Tensor<double> y = nn::forward(g, in, std::size_t{0}, g.size());
        double s = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += w[i] * y[i];
        return s;
    };
    auto [y, tape] = nn::forward_train(g, x, 0, g.size());
    tape = nn::backward(g, std::move(tape), w);

    Result r;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x[i];
        x[i] = keep + kEps;
        const double up = f(x);
        x[i] = keep - kEps;
        const double dn = f(x);
        x[i] = keep;
        note(r, tape.input_grad[i], (up - dn) / (2 * kEps), "input[" + std::to_string(i) + "]");
    }
    for (std::size_t li = 0; li < g.size(); ++li) {
        const auto* grads = tape.grads_for(li);
        for (std::size_t p = 0; p < g.layers[li].params.size(); ++p) {
            auto& param = g.layers[li].params[p];
            for (std::size_t i = 0; i < param.numel(); ++i) {
                const double keep = param[i];
                param[i] = keep + kEps;
                const double up = f(x);
                param[i] = keep - kEps;
                const double dn = f(x);
                param[i] = keep;
                note(r, (*grads)[p][i], (up - dn) / (2 * kEps),
                     "layer" + std::to_string(li) + ".param" + std::to_string(p) + "[" + std::to_string(i) + "]");
            }
        }
    }
    return r;
}

inline Graph single(const Shape& in, nn::Layer<double> l) {
    Graph g;
    g.input_shape = in;
    g.layers.push_back(std::move(l));
    g.validate();
    return g;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::uint16_t pick16(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return static_cast<std::uint16_t>(pick(rng, lo, hi));
}

// Loss composite: mean|z_enc| + alpha * CE(tail(decoder(encoder(x)))), the
// quantizer left out (its Jacobian is the identity by construction).
inline Result check_composite(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    splitnn::BottleneckSpec spec;
    spec.split_point_id = "split";
    spec.channels = pick16(rng, 2, 4);
    spec.height = pick16(rng, 3, 6);
    spec.width = pick16(rng, 3, 6);
    spec.reduced_channels = pick16(rng, 1, spec.channels);
    spec.stride = pick16(rng, 1, 3);
    const auto b = splitnn::build_bottleneck<double>(spec, seed);
    const std::size_t classes = pick(rng, 2, 4);
    Graph g;
    g.input_shape = spec.input_shape();
    for (const auto& l : b.encoder) g.layers.push_back(l);
    const std::size_t encoded = g.layers.size();
    for (const auto& l : b.decoder) g.layers.push_back(l);
    g.layers.push_back(nn::make_relu<double>());
    nn::LayerHyper fc;
    fc.in_channels = static_cast<std::uint16_t>(spec.input_shape().numel());
    fc.out_channels = static_cast<std::uint16_t>(classes);
    g.layers.push_back(nn::make_layer<double>(nn::LayerKind::fully_connected, fc, rng));
    for (auto& l : g.layers) {
        l.trainable = !l.params.empty();
        for (auto& p : l.params)
            for (auto& v : p.data()) v += std::uniform_real_distribution<double>(-0.1, 0.1)(rng);  // non-zero biases
    }
    g.validate();

    const std::size_t n = 2;
    const double alpha = std::pow(10.0, std::uniform_real_distribution<double>(-2, 1)(rng));
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(pick(rng, 0, classes - 1));
    Tensor<double> x = random_tensor(splitnn::nn::detail::batched(n, spec.input_shape()), rng);

    auto loss_of = [&](const Tensor<double>& in) {
        auto [logits, tape] = nn::forward_train(g, in, 0, g.size());
        return splitnn::compute_loss(tape.inputs[encoded], splitnn::reshape(logits, Shape{n, classes}), labels, alpha)
            .total;
    };
    // keep |z_enc| off the kink of the rate term
    for (int attempt = 0; attempt < 50; ++attempt) {
        auto z = nn::forward(g, x, std::size_t{0}, encoded);
        double m = 1e9;
        for (double v : z.data()) m = std::min(m, std::abs(v));
        if (m > 1e-3) break;
        x = random_tensor(x.shape(), rng);
    }

    auto [logits, tape] = nn::forward_train(g, x, 0, g.size());
    auto terms = splitnn::compute_loss(tape.inputs[encoded], splitnn::reshape(logits, Shape{n, classes}), labels, alpha);
    std::map<std::size_t, Tensor<double>> inject;
    inject.emplace(encoded, terms.rate_grad);
    tape = nn::backward(g, std::move(tape), splitnn::reshape(terms.task_grad, logits.shape()), inject);

    Result r;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x[i];
        x[i] = keep + kEps;
        const double up = loss_of(x);
        x[i] = keep - kEps;
        const double dn = loss_of(x);
        x[i] = keep;
        note(r, tape.input_grad[i], (up - dn) / (2 * kEps), "input[" + std::to_string(i) + "]");
    }
    for (std::size_t li = 0; li < g.size(); ++li) {
        const auto* grads = tape.grads_for(li);
        for (std::size_t p = 0; p < g.layers[li].params.size(); ++p) {
            auto& param = g.layers[li].params[p];
            for (std::size_t i = 0; i < param.numel(); ++i) {
                const double keep = param[i];
                param[i] = keep + kEps;
                const double up = loss_of(x);
                param[i] = keep - kEps;
                const double dn = loss_of(x);
                param[i] = keep;
                note(r, (*grads)[p][i], (up - dn) / (2 * kEps),
                     "layer" + std::to_string(li) + ".param" + std::to_string(p) + "[" + std::to_string(i) + "]");
            }
        }
    }
    return r;
}

using Instance = std::function<Result(std::uint64_t seed)>;

inline std::vector<std::pair<std::string, Instance>> kinds() {
    using nn::LayerHyper;
    using nn::LayerKind;
    auto conv_like = [](LayerKind kind) {
        return [kind](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            LayerHyper h;
            h.in_channels = pick16(rng, 1, 3);
            h.out_channels = pick16(rng, 1, 3);
            h.kernel = static_cast<std::uint16_t>(pick(rng, 0, 1) ? 3 : 1);
            h.stride = pick16(rng, 1, 2);
            h.pad = pick16(rng, 0, h.kernel / 2);
            const Shape in{h.in_channels, pick(rng, 3, 6), pick(rng, 3, 6)};
            auto l = nn::make_layer<double>(kind, h, rng, true);
            for (auto& p : l.params) p = random_tensor(p.shape(), rng);
            Graph g = single(in, std::move(l));
            return check_graph(g, random_tensor(nn::detail::batched(2, in), rng), rng);
        };
    };
    std::vector<std::pair<std::string, Instance>> out;
    out.emplace_back("conv2d", conv_like(LayerKind::conv2d));
    out.emplace_back("dwsep_conv2d", conv_like(LayerKind::dwsep_conv2d));
    out.emplace_back("transposed_dwsep_conv2d", [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        LayerHyper h;
        h.in_channels = pick16(rng, 1, 3);
        h.out_channels = pick16(rng, 1, 3);
        h.kernel = 3;
        h.stride = pick16(rng, 1, 3);
        h.pad = pick16(rng, 0, 1);
        h.out_pad_h = pick16(rng, 0, h.stride - 1u);
        h.out_pad_w = pick16(rng, 0, h.stride - 1u);
        const Shape in{h.in_channels, pick(rng, 2, 4), pick(rng, 2, 4)};
        auto l = nn::make_layer<double>(LayerKind::transposed_dwsep_conv2d, h, rng, true);
        for (auto& p : l.params) p = random_tensor(p.shape(), rng);
        Graph g = single(in, std::move(l));
        return check_graph(g, random_tensor(nn::detail::batched(2, in), rng), rng);
    });
    out.emplace_back("relu", [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const Shape in{pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)};
        Graph g = single(in, nn::make_relu<double>());
        auto x = random_tensor(nn::detail::batched(2, in), rng);
        avoid_zero(x);
        return check_graph(g, x, rng);
    });
    for (auto kind : {LayerKind::maxpool, LayerKind::avgpool}) {
        out.emplace_back(nn::kind_name(kind), [kind](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            const auto window = pick16(rng, 2, 3);
            const auto stride = pick16(rng, 1, window);
            const Shape in{pick(rng, 1, 3), pick(rng, window, 7), pick(rng, window, 7)};
            Graph g = single(in, nn::make_pool<double>(kind, window, stride));
            return check_graph(g, random_tensor(nn::detail::batched(2, in), rng), rng);
        });
    }
    out.emplace_back("fully_connected", [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const Shape in{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
        LayerHyper h;
        h.in_channels = static_cast<std::uint16_t>(in.numel());
        h.out_channels = pick16(rng, 1, 5);
        auto l = nn::make_layer<double>(LayerKind::fully_connected, h, rng, true);
        for (auto& p : l.params) p = random_tensor(p.shape(), rng);
        Graph g = single(in, std::move(l));
        return check_graph(g, random_tensor(nn::detail::batched(3, in), rng), rng);
    });
    out.emplace_back("softmax_cross_entropy", [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        nn::Layer<double> l;
        l.kind = LayerKind::softmax_cross_entropy;
        const Shape in{pick(rng, 2, 6), 1, 1};
        Graph g = single(in, l);
        return check_graph(g, random_tensor(nn::detail::batched(3, in), rng, -3, 3), rng);
    });
    auto bottleneck_half = [](bool encoder) {
        return [encoder](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            splitnn::BottleneckSpec spec;
            spec.split_point_id = "split";
            spec.channels = pick16(rng, 2, 4);
            spec.height = pick16(rng, 3, 7);
            spec.width = pick16(rng, 3, 7);
            spec.reduced_channels = pick16(rng, 1, spec.channels);
            spec.stride = pick16(rng, 1, 3);
            auto b = splitnn::build_bottleneck<double>(spec, seed);
            for (auto* part : {&b.encoder, &b.decoder})
                for (auto& l : *part)
                    for (auto& p : l.params) p = random_tensor(p.shape(), rng);
            Graph g = encoder ? splitnn::encoder_graph(b) : splitnn::decoder_graph(b);
            return check_graph(g, random_tensor(nn::detail::batched(2, g.input_shape), rng), rng);
        };
    };
    out.emplace_back("bottleneck_encoder", bottleneck_half(true));
    out.emplace_back("bottleneck_decoder", bottleneck_half(false));
    out.emplace_back("loss_composite", [](std::uint64_t seed) { return check_composite(seed); });
    return out;
}

}  // namespace gradcheck
