#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splitnn/error.hpp"

namespace splitnn {

// Ordered list of positive extents. Feature tensors use (C, H, W), batched
// ones (N, C, H, W).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
    explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    const std::vector<std::size_t>& dims() const noexcept { return dims_; }

    std::size_t numel() const noexcept {
        return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
    }

    // Row-major linear offset of a full coordinate.
    std::size_t offset(std::span<const std::size_t> index) const {
        if (index.size() != dims_.size()) throw ShapeError("index rank mismatch for shape " + str());
        std::size_t off = 0;
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (index[i] >= dims_[i]) throw ShapeError("index out of range for shape " + str());
            off = off * dims_[i] + index[i];
        }
        return off;
    }

    // Inverse of offset().
    std::vector<std::size_t> coords(std::size_t offset) const {
        if (offset >= numel()) throw ShapeError("offset out of range for shape " + str());
        std::vector<std::size_t> out(dims_.size());
        for (std::size_t i = dims_.size(); i-- > 0;) {
            out[i] = offset % dims_[i];
            offset /= dims_[i];
        }
        return out;
    }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
        os << ')';
        return os.str();
    }

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    void validate() const {
        if (dims_.empty()) throw ShapeError("shape must have at least one dimension");
        for (std::size_t d : dims_)
            if (d == 0) throw ShapeError("shape dimensions must be >= 1");
    }

    std::vector<std::size_t> dims_;
};

// Dense row-major array. Value type; copies are deep.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_.numel())
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::initializer_list<std::size_t> idx) {
        return data_[shape_.offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
    }
    const T& at(std::initializer_list<std::size_t> idx) const {
        return data_[shape_.offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, Shape s) {
    if (s.numel() != t.numel())
        throw ShapeError("cannot reshape " + t.shape().str() + " to " + s.str() + ": element counts differ");
    return Tensor<T>(std::move(s), t.storage());
}

template <typename T>
Tensor<T> reshape(Tensor<T>&& t, Shape s) {
    if (s.numel() != t.numel())
        throw ShapeError("cannot reshape " + t.shape().str() + " to " + s.str() + ": element counts differ");
    return Tensor<T>(std::move(s), std::move(t.storage()));
}

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace detail

template <typename T, typename F>
Tensor<T> elementwise(const Tensor<T>& t, F&& f) {
    Tensor<T> out(t.shape());
    std::transform(t.data().begin(), t.data().end(), out.data().begin(), std::forward<F>(f));
    detail::check_finite(out, "elementwise");
    return out;
}

template <typename T, typename F>
Tensor<T> zip_with(const Tensor<T>& a, const Tensor<T>& b, F&& f, const char* op = "zip_with") {
    detail::check_same_shape(a, b, op);
    Tensor<T> out(a.shape());
    std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.data().begin(), std::forward<F>(f));
    detail::check_finite(out, op);
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return zip_with(a, b, std::plus<T>(), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return zip_with(a, b, std::minus<T>(), "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return zip_with(a, b, std::multiplies<T>(), "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& t, T factor) {
    return elementwise(t, [factor](T v) { return v * factor; });
}

// Reductions accumulate in double regardless of T.
template <typename T>
double sum(const Tensor<T>& t) {
    double acc = 0.0;
    for (T v : t.data()) acc += static_cast<double>(v);
    return acc;
}

template <typename T>
double mean(const Tensor<T>& t) {
    return t.empty() ? 0.0 : sum(t) / static_cast<double>(t.numel());
}

template <typename T>
double abs_sum(const Tensor<T>& t) {
    double acc = 0.0;
    for (T v : t.data()) acc += std::abs(static_cast<double>(v));
    return acc;
}

template <typename T>
double max_abs(const Tensor<T>& t) {
    double m = 0.0;
    for (T v : t.data()) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

// Copy of sample `n` out of a batched (N, ...) tensor, without the batch dim.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& batched, std::size_t n) {
    const auto& dims = batched.shape().dims();
    if (dims.size() < 2 || n >= dims[0]) throw ShapeError("slice_batch: bad index for " + batched.shape().str());
    std::vector<std::size_t> rest(dims.begin() + 1, dims.end());
    Shape s(rest);
    std::size_t stride = s.numel();
    auto first = batched.data().begin() + static_cast<std::ptrdiff_t>(n * stride);
    return Tensor<T>(s, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(stride)));
}

// Stack equally shaped tensors along a new leading batch dimension.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
    if (items.empty()) throw ShapeError("stack: no tensors");
    std::vector<std::size_t> dims{items.size()};
    const auto& inner = items[0].shape().dims();
    dims.insert(dims.end(), inner.begin(), inner.end());
    std::vector<T> data;
    data.reserve(items.size() * items[0].numel());
    for (const auto& t : items) {
        if (t.shape() != items[0].shape()) throw ShapeError("stack: shape mismatch");
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor<T>(Shape(dims), std::move(data));
}

}  // namespace splitnn
