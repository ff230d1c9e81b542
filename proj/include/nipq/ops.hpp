#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "nipq/tensor.hpp"

namespace nipq {

namespace detail {

template <class T>
using NodeList = std::vector<std::shared_ptr<Node<T>>>;

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw Error("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned to `out`, zero along broadcast dimensions.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t i = in.size() - 1 - k;
        const std::size_t o = out.size() - 1 - k;
        strides[o] = in[i] == 1 ? 0 : s;
        s *= in[i];
    }
    return strides;
}

/// Calls fn(out_index, a_index, b_index) for every element of the broadcast result.
template <class Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
    const std::size_t n = shape_numel(out);
    const std::size_t na = shape_numel(a), nb = shape_numel(b);
    if (a == b) {
        for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
        return;
    }
    if (nb == 1 && na == n) {
        for (std::size_t i = 0; i < n; ++i) fn(i, i, std::size_t{0});
        return;
    }
    if (na == 1 && nb == n) {
        for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0}, i);
        return;
    }
    const auto sa = broadcast_strides(a, out);
    const auto sb = broadcast_strides(b, out);
    std::vector<std::size_t> idx(out.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (std::size_t d = out.size(); d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * idx[d];
            ib -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

template <class T, class F, class DA, class DB>
BasicTensor<T> binary_op(const BasicTensor<T>& a, const BasicTensor<T>& b, F f, DA da, DB db) {
    Shape out = broadcast_shape(a.shape(), b.shape());
    std::vector<T> data(shape_numel(out));
    const auto ad = a.data();
    const auto bd = b.data();
    for_each_broadcast(out, a.shape(), b.shape(),
                       [&](std::size_t i, std::size_t ia, std::size_t ib) { data[i] = f(ad[ia], bd[ib]); });
    return make_result<T>(out, std::move(data), {a.node_ptr(), b.node_ptr()},
                          [da, db](Node<T>& self) {
                              auto& pa = *self.parents[0];
                              auto& pb = *self.parents[1];
                              std::span<T> ga, gb;
                              if (pa.requires_grad) ga = pa.grad_buffer();
                              if (pb.requires_grad) gb = pb.grad_buffer();
                              for_each_broadcast(self.shape, pa.shape, pb.shape,
                                                 [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                                     const T g = self.grad[i];
                                                     if (!ga.empty()) ga[ia] += g * da(pa.data[ia], pb.data[ib], self.data[i]);
                                                     if (!gb.empty()) gb[ib] += g * db(pa.data[ia], pb.data[ib], self.data[i]);
                                                 });
                          });
}

/// f(x) forward, df(x, y) = dy/dx backward.
template <class T, class F, class DF>
BasicTensor<T> unary_op(const BasicTensor<T>& x, F f, DF df) {
    std::vector<T> data(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = f(xd[i]);
    return make_result<T>(x.shape(), std::move(data), {x.node_ptr()}, [df](Node<T>& self) {
        auto& p = *self.parents[0];
        auto g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.data[i], self.data[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Constructors and shape ops

template <class T>
BasicTensor<T> constant_like(const BasicTensor<T>& x, T value) {
    return BasicTensor<T>(x.shape(), value);
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw Error("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    return detail::make_result<T>(std::move(shape), x.to_vector(), {x.node_ptr()}, [](detail::Node<T>& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

/// Collapses every dimension after the first.
template <class T>
BasicTensor<T> flatten(const BasicTensor<T>& x) {
    return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

/// Columns [begin, end) of a [N, D] tensor.
template <class T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
    if (x.rank() != 2 || begin >= end || end > x.dim(1))
        throw Error("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                    shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1), w = end - begin;
    std::vector<T> out(n * w);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xd[i * d + begin + j];
    return detail::make_result<T>(Shape{n, w}, std::move(out), {x.node_ptr()}, [n, d, w, begin](detail::Node<T>& self) {
        auto g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * d + begin + j] += self.grad[i * w + j];
    });
}

/// Concatenates [N, D_k] tensors along the second axis.
template <class T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw Error("concat_cols needs at least one tensor");
    const std::size_t n = parts[0].dim(0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    detail::NodeList<T> parents;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n) throw Error("concat_cols: incompatible part " + shape_str(p.shape()));
        widths.push_back(p.dim(1));
        total += p.dim(1);
        parents.push_back(p.node_ptr());
    }
    std::vector<T> out(n * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto pd = parts[k].data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + off + j] = pd[i * widths[k] + j];
        off += widths[k];
    }
    return detail::make_result<T>(Shape{n, total}, std::move(out), parents, [n, total, widths](detail::Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            auto& p = *self.parents[k];
            if (p.requires_grad) {
                auto g = p.grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + off + j];
            }
            off += widths[k];
        }
    });
}

// ---------------------------------------------------------------------------
// Broadcasting arithmetic

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <class T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T x, T y, T) { return -x / (y * y); });
}

template <class T> BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <class T> BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <class T> BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <class T> BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }

template <class T> BasicTensor<T> operator+(const BasicTensor<T>& a, std::type_identity_t<T> s) { return add(a, BasicTensor<T>::scalar(s)); }
template <class T> BasicTensor<T> operator-(const BasicTensor<T>& a, std::type_identity_t<T> s) { return sub(a, BasicTensor<T>::scalar(s)); }
template <class T> BasicTensor<T> operator*(const BasicTensor<T>& a, std::type_identity_t<T> s) { return mul(a, BasicTensor<T>::scalar(s)); }
template <class T> BasicTensor<T> operator/(const BasicTensor<T>& a, std::type_identity_t<T> s) { return div(a, BasicTensor<T>::scalar(s)); }
template <class T> BasicTensor<T> operator+(std::type_identity_t<T> s, const BasicTensor<T>& a) { return add(BasicTensor<T>::scalar(s), a); }
template <class T> BasicTensor<T> operator-(std::type_identity_t<T> s, const BasicTensor<T>& a) { return sub(BasicTensor<T>::scalar(s), a); }
template <class T> BasicTensor<T> operator*(std::type_identity_t<T> s, const BasicTensor<T>& a) { return mul(BasicTensor<T>::scalar(s), a); }
template <class T> BasicTensor<T> operator/(std::type_identity_t<T> s, const BasicTensor<T>& a) { return div(BasicTensor<T>::scalar(s), a); }

template <class T>
BasicTensor<T> operator-(const BasicTensor<T>& a) {
    return detail::unary_op(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                            [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
T softplus_value(T v) {
    // log(1 + e^v) without overflow
    return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

/// Inverse of softplus for y > 0.
template <class T>
T softplus_inverse(T y) {
    if (!(y > T(0))) throw Error("softplus_inverse needs a positive argument");
    return y > T(20) ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

template <class T>
BasicTensor<T> softplus(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return softplus_value(v); },
                            [](T v, T) {
                                return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                                 : std::exp(v) / (T(1) + std::exp(v));
                            });
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
BasicTensor<T> log(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// 2^x
template <class T>
BasicTensor<T> pow2(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::exp2(v); },
                            [](T, T y) { return std::numbers::ln2_v<T> * y; });
}

template <class T>
BasicTensor<T> abs(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::abs(v); },
                            [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// Elementwise min(max(x, lo), hi). The gradient is 1 on the closed interval [lo, hi].
template <class T>
BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi) {
    if (lo > hi) throw Error("clamp: lo " + std::to_string(lo) + " exceeds hi " + std::to_string(hi));
    return detail::unary_op(x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
                            [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

/// Rounds half away from zero; the backward pass is the identity (straight-through).
template <class T>
BasicTensor<T> round_ste(const BasicTensor<T>& x) {
    return detail::unary_op(x, [](T v) { return std::round(v); }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    return detail::make_result<T>(Shape{}, {s}, {x.node_ptr()}, [](detail::Node<T>& self) {
        auto g = self.parents[0]->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    return sum(x) / static_cast<T>(x.numel());
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw Error("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ad[i * k + p];
            const T* brow = &bd[p * n];
            T* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return detail::make_result<T>(Shape{m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                                  [m, k, n](detail::Node<T>& self) {
                                      auto& pa = *self.parents[0];
                                      auto& pb = *self.parents[1];
                                      const auto& g = self.grad;
                                      if (pa.requires_grad) {  // g · bᵀ
                                          auto ga = pa.grad_buffer();
                                          for (std::size_t i = 0; i < m; ++i)
                                              for (std::size_t p = 0; p < k; ++p) {
                                                  T s = T(0);
                                                  for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb.data[p * n + j];
                                                  ga[i * k + p] += s;
                                              }
                                      }
                                      if (pb.requires_grad) {  // aᵀ · g
                                          auto gb = pb.grad_buffer();
                                          for (std::size_t i = 0; i < m; ++i)
                                              for (std::size_t p = 0; p < k; ++p) {
                                                  const T av = pa.data[i * k + p];
                                                  for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                                              }
                                      }
                                  });
}

/// x[N, in] · W[out, in]ᵀ + bias[out]. Weight rows are output units.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias = nullptr) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw Error("linear shape mismatch: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()));
    const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    if (bias && (bias->numel() != out))
        throw Error("linear bias shape " + shape_str(bias->shape()) + " does not match " + std::to_string(out));
    std::vector<T> y(n * out);
    const auto xd = x.data();
    const auto wd = w.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
            T s = bias ? bias->data()[o] : T(0);
            const T* xr = &xd[i * in];
            const T* wr = &wd[o * in];
            for (std::size_t p = 0; p < in; ++p) s += xr[p] * wr[p];
            y[i * out + o] = s;
        }
    detail::NodeList<T> parents{x.node_ptr(), w.node_ptr()};
    if (bias) parents.push_back(bias->node_ptr());
    return detail::make_result<T>(Shape{n, out}, std::move(y), parents, [n, in, out](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const auto& g = self.grad;
        if (px.requires_grad) {
            auto gx = px.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < out; ++o) {
                    const T gv = g[i * out + o];
                    const T* wr = &pw.data[o * in];
                    T* gr = &gx[i * in];
                    for (std::size_t p = 0; p < in; ++p) gr[p] += gv * wr[p];
                }
        }
        if (pw.requires_grad) {
            auto gw = pw.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < out; ++o) {
                    const T gv = g[i * out + o];
                    const T* xr = &px.data[i * in];
                    T* gr = &gw[o * in];
                    for (std::size_t p = 0; p < in; ++p) gr[p] += gv * xr[p];
                }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto gb = self.parents[2]->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < out; ++o) gb[o] += g[i * out + o];
        }
    });
}

struct Conv2dGeometry {
    std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;

    static Conv2dGeometry make(const Shape& x, const Shape& wt, std::size_t stride, std::size_t pad) {
        if (x.size() != 4 || wt.size() != 4 || x[1] != wt[1])
            throw Error("conv2d shape mismatch: input " + shape_str(x) + ", kernel " + shape_str(wt));
        if (stride == 0) throw Error("conv2d stride must be positive");
        Conv2dGeometry g{x[0], x[1], x[2], x[3], wt[0], wt[2], wt[3], stride, pad, 0, 0};
        if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad)
            throw Error("conv2d kernel " + shape_str(wt) + " larger than padded input " + shape_str(x));
        if ((g.h + 2 * pad - g.kh) % stride != 0 || (g.w + 2 * pad - g.kw) % stride != 0)
            throw Error("conv2d output extent is not integral for input " + shape_str(x) + ", kernel " +
                        shape_str(wt) + ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
        g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
        g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
        return g;
    }

    // Valid output range [lo, hi) along one axis for kernel offset k.
    static std::pair<std::size_t, std::size_t> span_for(std::size_t k, std::size_t in, std::size_t out,
                                                        std::size_t stride, std::size_t pad) {
        const long lo_num = static_cast<long>(pad) - static_cast<long>(k);
        const long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long>(stride) - 1) / static_cast<long>(stride);
        const long hi_num = static_cast<long>(in) - 1 + static_cast<long>(pad) - static_cast<long>(k);
        const long hi = hi_num < 0 ? -1 : hi_num / static_cast<long>(stride);
        const long clipped = std::min<long>(hi + 1, static_cast<long>(out));
        if (clipped <= lo) return {0, 0};
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(clipped)};
    }
};

/// Direct cross-correlation of x[N,C,H,W] with kernels w[F,C,kh,kw].
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t stride = 1, std::size_t pad = 0) {
    const auto g = Conv2dGeometry::make(x.shape(), w.shape(), stride, pad);
    std::vector<T> out(g.n * g.f * g.oh * g.ow, T(0));
    const auto xd = x.data();
    const auto wd = w.data();

    // Visits (input offset, output offset, weight value index) rows; body handles the contiguous ow run.
    auto visit = [g](auto&& body) {
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            const auto [oh0, oh1] = Conv2dGeometry::span_for(ki, g.h, g.oh, g.stride, g.pad);
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const auto [ow0, ow1] = Conv2dGeometry::span_for(kj, g.w, g.ow, g.stride, g.pad);
                if (ow1 <= ow0) continue;
                for (std::size_t oh = oh0; oh < oh1; ++oh) {
                    const std::size_t ih = oh * g.stride + ki - g.pad;
                    body(ki, kj, oh, ih, ow0, ow1);
                }
            }
        }
    };

    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t f = 0; f < g.f; ++f) {
            T* op = &out[((n * g.f) + f) * g.oh * g.ow];
            for (std::size_t c = 0; c < g.c; ++c) {
                const T* xp = &xd[((n * g.c) + c) * g.h * g.w];
                const T* wp = &wd[((f * g.c) + c) * g.kh * g.kw];
                visit([&](std::size_t ki, std::size_t kj, std::size_t oh, std::size_t ih, std::size_t ow0, std::size_t ow1) {
                    const T wv = wp[ki * g.kw + kj];
                    T* orow = op + oh * g.ow;
                    const std::size_t base = ih * g.w + kj;
                    for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * xp[base + ow * g.stride - g.pad];
                });
            }
        }

    return detail::make_result<T>(Shape{g.n, g.f, g.oh, g.ow}, std::move(out), {x.node_ptr(), w.node_ptr()},
                                  [g, visit](detail::Node<T>& self) {
                                      auto& px = *self.parents[0];
                                      auto& pw = *self.parents[1];
                                      std::span<T> gx, gw;
                                      if (px.requires_grad) gx = px.grad_buffer();
                                      if (pw.requires_grad) gw = pw.grad_buffer();
                                      for (std::size_t n = 0; n < g.n; ++n)
                                          for (std::size_t f = 0; f < g.f; ++f) {
                                              const T* gp = &self.grad[((n * g.f) + f) * g.oh * g.ow];
                                              for (std::size_t c = 0; c < g.c; ++c) {
                                                  const std::size_t xoff = ((n * g.c) + c) * g.h * g.w;
                                                  const std::size_t woff = ((f * g.c) + c) * g.kh * g.kw;
                                                  visit([&](std::size_t ki, std::size_t kj, std::size_t oh, std::size_t ih,
                                                            std::size_t ow0, std::size_t ow1) {
                                                      const T* grow = gp + oh * g.ow;
                                                      const std::size_t xrow = xoff + ih * g.w + kj;
                                                      if (!gx.empty()) {
                                                          const T wv = pw.data[woff + ki * g.kw + kj];
                                                          for (std::size_t ow = ow0; ow < ow1; ++ow)
                                                              gx[xrow + ow * g.stride - g.pad] += wv * grow[ow];
                                                      }
                                                      if (!gw.empty()) {
                                                          T s = T(0);
                                                          for (std::size_t ow = ow0; ow < ow1; ++ow)
                                                              s += grow[ow] * px.data[xrow + ow * g.stride - g.pad];
                                                          gw[woff + ki * g.kw + kj] += s;
                                                      }
                                                  });
                                              }
                                          }
                                  });
}

/// Non-overlapping k×k average pooling over the last two axes.
template <class T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x, std::size_t k) {
    if (x.rank() != 4 || k == 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0)
        throw Error("avg_pool2d: window " + std::to_string(k) + " does not tile " + shape_str(x.shape()));
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / k, ow = w / k;
    const T scale = T(1) / static_cast<T>(k * k);
    std::vector<T> out(planes * oh * ow, T(0));
    const auto xd = x.data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) out[(p * oh + i / k) * ow + j / k] += xd[(p * h + i) * w + j] * scale;
    return detail::make_result<T>(Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x.node_ptr()},
                                  [planes, h, w, k, oh, ow, scale](detail::Node<T>& self) {
                                      auto gx = self.parents[0]->grad_buffer();
                                      for (std::size_t p = 0; p < planes; ++p)
                                          for (std::size_t i = 0; i < h; ++i)
                                              for (std::size_t j = 0; j < w; ++j)
                                                  gx[(p * h + i) * w + j] += self.grad[(p * oh + i / k) * ow + j / k] * scale;
                                  });
}

/// Per-channel batch normalization for [N,C] or [N,C,H,W] inputs.
///
/// With use_batch_stats the batch mean and biased variance normalize the input and, when
/// `update` is set, fold into the running buffers (momentum blend; momentum 1 replaces).
/// Otherwise the running buffers normalize the input.
template <class T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          std::span<T> running_mean, std::span<T> running_var, bool use_batch_stats, bool update,
                          T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.rank() != 2 && x.rank() != 4) throw Error("batch_norm expects [N,C] or [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (gamma.numel() != c || beta.numel() != c || running_mean.size() != c || running_var.size() != c)
        throw Error("batch_norm parameter size does not match channel count " + std::to_string(c));
    const std::size_t m = n * inner;
    const auto xd = x.data();
    auto at = [c, inner](std::size_t i, std::size_t ch, std::size_t s) { return (i * c + ch) * inner + s; };

    std::vector<T> mu(c), inv_std(c), y(x.numel()), xhat(x.numel());
    for (std::size_t ch = 0; ch < c; ++ch) {
        T mean_v, var_v;
        if (use_batch_stats) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t q = 0; q < inner; ++q) s += xd[at(i, ch, q)];
            const double mean_d = s / static_cast<double>(m);
            double ss = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t q = 0; q < inner; ++q) {
                    const double d = xd[at(i, ch, q)] - mean_d;
                    ss += d * d;
                }
            mean_v = static_cast<T>(mean_d);
            var_v = static_cast<T>(ss / static_cast<double>(m));
            if (update) {
                const T unbiased = m > 1 ? static_cast<T>(ss / static_cast<double>(m - 1)) : var_v;
                running_mean[ch] += momentum * (mean_v - running_mean[ch]);
                running_var[ch] += momentum * (unbiased - running_var[ch]);
            }
        } else {
            mean_v = running_mean[ch];
            var_v = running_var[ch];
        }
        mu[ch] = mean_v;
        inv_std[ch] = T(1) / std::sqrt(var_v + eps);
        const T gm = gamma.data()[ch], bt = beta.data()[ch];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t q = 0; q < inner; ++q) {
                const std::size_t idx = at(i, ch, q);
                xhat[idx] = (xd[idx] - mean_v) * inv_std[ch];
                y[idx] = gm * xhat[idx] + bt;
            }
    }

    return detail::make_result<T>(
        x.shape(), std::move(y), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
        [n, c, inner, m, inv_std, xhat = std::move(xhat), use_batch_stats, at](detail::Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& g = self.grad;
            for (std::size_t ch = 0; ch < c; ++ch) {
                T sg = T(0), sgx = T(0);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t q = 0; q < inner; ++q) {
                        const std::size_t idx = at(i, ch, q);
                        sg += g[idx];
                        sgx += g[idx] * xhat[idx];
                    }
                if (pg.requires_grad) pg.grad_buffer()[ch] += sgx;
                if (pb.requires_grad) pb.grad_buffer()[ch] += sg;
                if (!px.requires_grad) continue;
                auto gx = px.grad_buffer();
                const T gm = pg.data[ch];
                const T k = gm * inv_std[ch];
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t q = 0; q < inner; ++q) {
                        const std::size_t idx = at(i, ch, q);
                        if (use_batch_stats)
                            gx[idx] += k * (g[idx] - sg / static_cast<T>(m) - xhat[idx] * sgx / static_cast<T>(m));
                        else
                            gx[idx] += k * g[idx];
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean softmax cross-entropy of logits[N,C] against integer class labels.
template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw Error("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                    std::to_string(labels.size()) + " labels");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    const auto ld = logits.data();
    std::vector<T> prob(n * c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= c)
            throw Error("label " + std::to_string(label) + " out of range for " + std::to_string(c) + " classes");
        T mx = ld[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, ld[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            prob[i * c + j] = std::exp(ld[i * c + j] - mx);
            z += prob[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) prob[i * c + j] = static_cast<T>(prob[i * c + j] / z);
        loss += -(static_cast<double>(ld[i * c + label] - mx) - std::log(z));
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return detail::make_result<T>(Shape{}, {static_cast<T>(loss / static_cast<double>(n))}, {logits.node_ptr()},
                                  [n, c, prob = std::move(prob), lab = std::move(lab)](detail::Node<T>& self) {
                                      auto gl = self.parents[0]->grad_buffer();
                                      const T s = self.grad[0] / static_cast<T>(n);
                                      for (std::size_t i = 0; i < n; ++i)
                                          for (std::size_t j = 0; j < c; ++j)
                                              gl[i * c + j] += s * (prob[i * c + j] - (static_cast<int>(j) == lab[i] ? T(1) : T(0)));
                                  });
}

template <class T>
BasicTensor<T> mse(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    if (pred.numel() != target.numel())
        throw Error("mse: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    return mean(square(pred - reshape(target, pred.shape())));
}

/// Mean Huber loss: 0.5·x² for |x| ≤ δ, δ·(|x| − 0.5·δ) beyond.
template <class T>
BasicTensor<T> huber(const BasicTensor<T>& x, T delta) {
    if (!(delta > T(0))) throw Error("huber: delta must be positive");
    auto h = detail::unary_op(
        x, [delta](T v) { return std::abs(v) <= delta ? T(0.5) * v * v : delta * (std::abs(v) - T(0.5) * delta); },
        [delta](T v, T) { return std::abs(v) <= delta ? v : (v > T(0) ? delta : -delta); });
    return mean(h);
}

}  // namespace nipq
