#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "splitnn/error.hpp"
#include "splitnn/nn/graph.hpp"

namespace splitnn::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamConfig cfg;
    std::uint64_t step = 0;
    // keyed by (layer index, parameter index)
    std::map<std::pair<std::size_t, std::size_t>, std::pair<Tensor<T>, Tensor<T>>> moments;
};

// One Adam update of every trainable parameter from the tape's gradients.
// Frozen layers are never touched.
template <typename T>
void optimizer_step(LayerGraph<T>& g, const GradTape<T>& tape, AdamState<T>& state) {
    if (!tape.has_grads) throw StateError("optimizer step requires a tape with gradients");
    if (tape.graph_id != g.id || tape.revision != g.revision) throw StateError("stale gradient tape");
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        const auto& l = g.layers[i];
        if (!l.trainable || l.params.empty()) continue;
        const auto* grads = tape.grads_for(i);
        if (!grads || grads->size() != l.params.size())
            throw StateError("missing gradients for trainable layer " + std::to_string(i));
    }

    state.step += 1;
    const auto& c = state.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
        auto& l = g.layers[i];
        if (!l.trainable) continue;
        const auto& grads = *tape.grads_for(i);
        for (std::size_t p = 0; p < l.params.size(); ++p) {
            auto& w = l.params[p];
            const auto& gr = grads[p];
            auto [it, inserted] = state.moments.try_emplace({i, p}, Tensor<T>(w.shape()), Tensor<T>(w.shape()));
            auto& [m, v] = it->second;
            for (std::size_t k = 0; k < w.numel(); ++k) {
                const double gk = static_cast<double>(gr[k]);
                const double mk = c.beta1 * static_cast<double>(m[k]) + (1.0 - c.beta1) * gk;
                const double vk = c.beta2 * static_cast<double>(v[k]) + (1.0 - c.beta2) * gk * gk;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                const double mhat = mk / bc1;
                const double vhat = vk / bc2;
                w[k] = static_cast<T>(static_cast<double>(w[k]) - c.lr * mhat / (std::sqrt(vhat) + c.eps));
            }
        }
    }
    g.revision += 1;
}

}  // namespace splitnn::nn
