#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "splitnn/tensor.hpp"

// Batched NCHW kernels. Forward kernels write into a preallocated output;
// backward kernels write the input gradient and *accumulate* parameter
// gradients, so callers zero them once per pass.
namespace splitnn::nn::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct Geometry {
    std::size_t n, c, h, w;     // input
    std::size_t oc, oh, ow;     // output
    std::size_t k, stride, pad;
};

// (C*K*K, OH*OW) patch matrix of one sample.
template <typename T>
void im2col(const T* x, const Geometry& g, T* col) {
    const std::size_t opix = g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t kh = 0; kh < g.k; ++kh)
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                T* row = col + ((c * g.k + kh) * g.k + kw) * opix;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    T* out = row + oy * g.ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(out, out + g.ow, T{0});
                        continue;
                    }
                    const T* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0}
                                                                                    : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
}

template <typename T>
void col2im(const T* col, const Geometry& g, T* dx) {
    const std::size_t opix = g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t kh = 0; kh < g.k; ++kh)
            for (std::size_t kw = 0; kw < g.k; ++kw) {
                const T* row = col + ((c * g.k + kh) * g.k + kw) * opix;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w))
                            dst[static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
                    }
                }
            }
}

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const Geometry& g, Tensor<T>& y) {
    const std::size_t ckk = g.c * g.k * g.k, opix = g.oh * g.ow;
    std::vector<T> col(ckk * opix);
    CMapMat<T> W(w.data().data(), static_cast<Eigen::Index>(g.oc), static_cast<Eigen::Index>(ckk));
    for (std::size_t n = 0; n < g.n; ++n) {
        im2col(x.data().data() + n * g.c * g.h * g.w, g, col.data());
        CMapMat<T> C(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(opix));
        MapMat<T> Y(y.data().data() + n * g.oc * opix, static_cast<Eigen::Index>(g.oc),
                    static_cast<Eigen::Index>(opix));
        Y.noalias() = W * C;
        for (std::size_t o = 0; o < g.oc; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += b[o];
    }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, const Geometry& g, Tensor<T>& dx,
                     Tensor<T>* dw, Tensor<T>* db) {
    const std::size_t ckk = g.c * g.k * g.k, opix = g.oh * g.ow;
    std::vector<T> col(ckk * opix), dcol(ckk * opix);
    CMapMat<T> W(w.data().data(), static_cast<Eigen::Index>(g.oc), static_cast<Eigen::Index>(ckk));
    std::fill(dx.data().begin(), dx.data().end(), T{0});
    for (std::size_t n = 0; n < g.n; ++n) {
        CMapMat<T> DY(dy.data().data() + n * g.oc * opix, static_cast<Eigen::Index>(g.oc),
                      static_cast<Eigen::Index>(opix));
        if (dw) {
            im2col(x.data().data() + n * g.c * g.h * g.w, g, col.data());
            CMapMat<T> C(col.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(opix));
            MapMat<T> DW(dw->data().data(), static_cast<Eigen::Index>(g.oc), static_cast<Eigen::Index>(ckk));
            DW.noalias() += DY * C.transpose();
            for (std::size_t o = 0; o < g.oc; ++o) (*db)[o] += DY.row(static_cast<Eigen::Index>(o)).sum();
        }
        MapMat<T> DC(dcol.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(opix));
        DC.noalias() = W.transpose() * DY;
        col2im(dcol.data(), g, dx.data().data() + n * g.c * g.h * g.w);
    }
}

// Depthwise KxK convolution, one filter per channel.
template <typename T>
void depthwise_forward(const T* x, const T* w, const T* b, const Geometry& g, T* y) {
    const auto H = static_cast<std::ptrdiff_t>(g.h), Wd = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t c = 0; c < g.c; ++c) {
            const T* xc = x + (n * g.c + c) * g.h * g.w;
            const T* wc = w + c * g.k * g.k;
            T* yc = y + (n * g.c + c) * g.oh * g.ow;
            for (std::size_t oy = 0; oy < g.oh; ++oy)
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    T acc = b[c];
                    for (std::size_t kh = 0; kh < g.k; ++kh) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= H) continue;
                        for (std::size_t kw = 0; kw < g.k; ++kw) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (ix < 0 || ix >= Wd) continue;
                            acc += xc[iy * Wd + ix] * wc[kh * g.k + kw];
                        }
                    }
                    yc[oy * g.ow + ox] = acc;
                }
        }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, const Geometry& g, T* dx, T* dw, T* db) {
    const auto H = static_cast<std::ptrdiff_t>(g.h), Wd = static_cast<std::ptrdiff_t>(g.w);
    std::fill(dx, dx + g.n * g.c * g.h * g.w, T{0});
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t c = 0; c < g.c; ++c) {
            const T* xc = x + (n * g.c + c) * g.h * g.w;
            const T* wc = w + c * g.k * g.k;
            const T* dyc = dy + (n * g.c + c) * g.oh * g.ow;
            T* dxc = dx + (n * g.c + c) * g.h * g.w;
            for (std::size_t oy = 0; oy < g.oh; ++oy)
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    const T gy = dyc[oy * g.ow + ox];
                    if (db) db[c] += gy;
                    for (std::size_t kh = 0; kh < g.k; ++kh) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= H) continue;
                        for (std::size_t kw = 0; kw < g.k; ++kw) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (ix < 0 || ix >= Wd) continue;
                            dxc[iy * Wd + ix] += gy * wc[kh * g.k + kw];
                            if (dw) dw[c * g.k * g.k + kh * g.k + kw] += gy * xc[iy * Wd + ix];
                        }
                    }
                }
        }
}

// Transposed depthwise convolution: the adjoint of depthwise_forward
// (without bias) mapping the (oh, ow) grid of `g` back onto (h, w). Here
// x has extent (g.oh, g.ow) and y has extent (g.h, g.w).
template <typename T>
void depthwise_transposed_forward(const T* x, const T* w, const T* b, const Geometry& g, T* y) {
    const auto H = static_cast<std::ptrdiff_t>(g.h), Wd = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t c = 0; c < g.c; ++c) {
            const T* xc = x + (n * g.c + c) * g.oh * g.ow;
            const T* wc = w + c * g.k * g.k;
            T* yc = y + (n * g.c + c) * g.h * g.w;
            std::fill(yc, yc + g.h * g.w, b[c]);
            for (std::size_t iy = 0; iy < g.oh; ++iy)
                for (std::size_t ix = 0; ix < g.ow; ++ix) {
                    const T v = xc[iy * g.ow + ix];
                    for (std::size_t kh = 0; kh < g.k; ++kh) {
                        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * g.stride + kh) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (oy < 0 || oy >= H) continue;
                        for (std::size_t kw = 0; kw < g.k; ++kw) {
                            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix * g.stride + kw) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (ox < 0 || ox >= Wd) continue;
                            yc[oy * Wd + ox] += v * wc[kh * g.k + kw];
                        }
                    }
                }
        }
}

template <typename T>
void depthwise_transposed_backward(const T* x, const T* w, const T* dy, const Geometry& g, T* dx, T* dw, T* db) {
    const auto H = static_cast<std::ptrdiff_t>(g.h), Wd = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t c = 0; c < g.c; ++c) {
            const T* xc = x + (n * g.c + c) * g.oh * g.ow;
            const T* wc = w + c * g.k * g.k;
            const T* dyc = dy + (n * g.c + c) * g.h * g.w;
            T* dxc = dx + (n * g.c + c) * g.oh * g.ow;
            if (db)
                for (std::size_t i = 0; i < g.h * g.w; ++i) db[c] += dyc[i];
            for (std::size_t iy = 0; iy < g.oh; ++iy)
                for (std::size_t ix = 0; ix < g.ow; ++ix) {
                    T acc{0};
                    const T v = xc[iy * g.ow + ix];
                    for (std::size_t kh = 0; kh < g.k; ++kh) {
                        const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(iy * g.stride + kh) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (oy < 0 || oy >= H) continue;
                        for (std::size_t kw = 0; kw < g.k; ++kw) {
                            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ix * g.stride + kw) -
                                                      static_cast<std::ptrdiff_t>(g.pad);
                            if (ox < 0 || ox >= Wd) continue;
                            const T gy = dyc[oy * Wd + ox];
                            acc += gy * wc[kh * g.k + kw];
                            if (dw) dw[c * g.k * g.k + kh * g.k + kw] += gy * v;
                        }
                    }
                    dxc[iy * g.ow + ix] = acc;
                }
        }
}

// 1x1 convolution: per sample Y(oc, pix) = W(oc, c) X(c, pix) + b.
template <typename T>
void pointwise_forward(const T* x, const T* w, const T* b, std::size_t n, std::size_t c, std::size_t oc,
                       std::size_t pix, T* y) {
    CMapMat<T> W(w, static_cast<Eigen::Index>(oc), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < n; ++i) {
        CMapMat<T> X(x + i * c * pix, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(pix));
        MapMat<T> Y(y + i * oc * pix, static_cast<Eigen::Index>(oc), static_cast<Eigen::Index>(pix));
        Y.noalias() = W * X;
        for (std::size_t o = 0; o < oc; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += b[o];
    }
}

template <typename T>
void pointwise_backward(const T* x, const T* w, const T* dy, std::size_t n, std::size_t c, std::size_t oc,
                        std::size_t pix, T* dx, T* dw, T* db) {
    CMapMat<T> W(w, static_cast<Eigen::Index>(oc), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < n; ++i) {
        CMapMat<T> DY(dy + i * oc * pix, static_cast<Eigen::Index>(oc), static_cast<Eigen::Index>(pix));
        MapMat<T> DX(dx + i * c * pix, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(pix));
        DX.noalias() = W.transpose() * DY;
        if (dw) {
            CMapMat<T> X(x + i * c * pix, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(pix));
            MapMat<T> DW(dw, static_cast<Eigen::Index>(oc), static_cast<Eigen::Index>(c));
            DW.noalias() += DY * X.transpose();
            for (std::size_t o = 0; o < oc; ++o) db[o] += DY.row(static_cast<Eigen::Index>(o)).sum();
        }
    }
}

// Y(n, out) = X(n, in) W(out, in)^T + b, one sample at a time so a row's
// result does not depend on the batch it was computed in.
template <typename T>
void fc_forward(const T* x, const T* w, const T* b, std::size_t n, std::size_t in, std::size_t out, T* y) {
    CMapMat<T> W(w, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> B(b, static_cast<Eigen::Index>(out));
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> X(x + i * in, static_cast<Eigen::Index>(in));
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> Y(y + i * out, static_cast<Eigen::Index>(out));
        Y.noalias() = W * X;
        Y += B;
    }
}

template <typename T>
void fc_backward(const T* x, const T* w, const T* dy, std::size_t n, std::size_t in, std::size_t out, T* dx, T* dw,
                 T* db) {
    CMapMat<T> W(w, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    CMapMat<T> DY(dy, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out));
    MapMat<T> DX(dx, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    DX.noalias() = DY * W;
    if (dw) {
        CMapMat<T> X(x, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
        MapMat<T> DW(dw, static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        DW.noalias() += DY.transpose() * X;
        for (std::size_t o = 0; o < out; ++o) db[o] += DY.col(static_cast<Eigen::Index>(o)).sum();
    }
}

// Pooling over non-overlapping or strided windows without padding.
// `argmax` receives, for max pooling, the flat input index of each output.
template <typename T>
void maxpool_forward(const T* x, const Geometry& g, T* y, std::uint32_t* argmax) {
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
        const T* xc = x + nc * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_i = 0;
                for (std::size_t kh = 0; kh < g.k; ++kh)
                    for (std::size_t kw = 0; kw < g.k; ++kw) {
                        std::size_t i = (oy * g.stride + kh) * g.w + ox * g.stride + kw;
                        if (xc[i] > best) {
                            best = xc[i];
                            best_i = i;
                        }
                    }
                const std::size_t o = nc * g.oh * g.ow + oy * g.ow + ox;
                y[o] = best;
                argmax[o] = static_cast<std::uint32_t>(nc * g.h * g.w + best_i);
            }
    }
}

template <typename T>
void maxpool_backward(const T* dy, const std::uint32_t* argmax, const Geometry& g, T* dx) {
    std::fill(dx, dx + g.n * g.c * g.h * g.w, T{0});
    for (std::size_t o = 0; o < g.n * g.c * g.oh * g.ow; ++o) dx[argmax[o]] += dy[o];
}

template <typename T>
void avgpool_forward(const T* x, const Geometry& g, T* y) {
    const T inv = T{1} / static_cast<T>(g.k * g.k);
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
        const T* xc = x + nc * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                T acc{0};
                for (std::size_t kh = 0; kh < g.k; ++kh)
                    for (std::size_t kw = 0; kw < g.k; ++kw)
                        acc += xc[(oy * g.stride + kh) * g.w + ox * g.stride + kw];
                y[nc * g.oh * g.ow + oy * g.ow + ox] = acc * inv;
            }
    }
}

template <typename T>
void avgpool_backward(const T* dy, const Geometry& g, T* dx) {
    const T inv = T{1} / static_cast<T>(g.k * g.k);
    std::fill(dx, dx + g.n * g.c * g.h * g.w, T{0});
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
        T* dxc = dx + nc * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
                const T v = dy[nc * g.oh * g.ow + oy * g.ow + ox] * inv;
                for (std::size_t kh = 0; kh < g.k; ++kh)
                    for (std::size_t kw = 0; kw < g.k; ++kw) dxc[(oy * g.stride + kh) * g.w + ox * g.stride + kw] += v;
            }
    }
}

// Row-wise softmax over the feature axis of an (n, classes) block.
template <typename T>
void softmax_rows(const T* x, std::size_t n, std::size_t classes, T* y) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* xr = x + i * classes;
        T* yr = y + i * classes;
        const T mx = *std::max_element(xr, xr + classes);
        T z{0};
        for (std::size_t j = 0; j < classes; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        for (std::size_t j = 0; j < classes; ++j) yr[j] /= z;
    }
}

}  // namespace splitnn::nn::kernels
