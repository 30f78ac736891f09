#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "splitnn/error.hpp"
#include "splitnn/nn/kernels.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn::nn {

template <typename T>
struct LossGrad {
    double loss = 0.0;
    Tensor<T> grad;
};

// Mean softmax cross-entropy over a batch of logits shaped (N, K, ...).
template <typename T>
LossGrad<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    const std::size_t n = logits.shape()[0];
    if (labels.size() != n) throw ShapeError("label count does not match batch size");
    const std::size_t classes = logits.numel() / n;
    Tensor<T> probs(logits.shape());
    kernels::softmax_rows(logits.data().data(), n, classes, probs.data().data());
    LossGrad<T> out{0.0, Tensor<T>(logits.shape())};
    const T inv_n = T{1} / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InputError("label out of range");
        // log-softmax computed directly for accuracy
        const T* row = logits.data().data() + i * classes;
        const T mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        out.loss += std::log(z) - static_cast<double>(row[y] - mx);
        for (std::size_t j = 0; j < classes; ++j) {
            T p = probs[i * classes + j];
            out.grad[i * classes + j] = (p - (static_cast<std::size_t>(y) == j ? T{1} : T{0})) * inv_n;
        }
    }
    out.loss /= static_cast<double>(n);
    return out;
}

// Mean |z| and its gradient sign(z)/numel.
template <typename T>
LossGrad<T> mean_abs(const Tensor<T>& z) {
    LossGrad<T> out{0.0, Tensor<T>(z.shape())};
    const T inv = T{1} / static_cast<T>(z.numel());
    for (std::size_t i = 0; i < z.numel(); ++i) {
        out.loss += std::abs(static_cast<double>(z[i]));
        out.grad[i] = z[i] > T{0} ? inv : (z[i] < T{0} ? -inv : T{0});
    }
    out.loss /= static_cast<double>(z.numel());
    return out;
}

// Row-wise argmax of (N, K, ...) logits; the first maximum wins.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
    const std::size_t n = logits.shape()[0];
    const std::size_t classes = logits.numel() / n;
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data().data() + i * classes;
        out[i] = static_cast<int>(std::max_element(row, row + classes) - row);
    }
    return out;
}

}  // namespace splitnn::nn
