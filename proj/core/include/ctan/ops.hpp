#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctan/rng.hpp"
#include "ctan/tape.hpp"
#include "ctan/tensor.hpp"

namespace cta {

/// Video features are rank-5 with axis order (N, T, C, H, W).
inline constexpr int kAxisN = 0;
inline constexpr int kAxisT = 1;
inline constexpr int kAxisC = 2;
inline constexpr int kAxisH = 3;
inline constexpr int kAxisW = 4;

struct Stride3 {
    std::int64_t t = 1, h = 1, w = 1;
};
struct Pad3 {
    std::int64_t t = 0, h = 0, w = 0;
};

/// Scaling coefficient for the gradient reversal layer, constrained to [0, 1].
struct GrlCoefficient {
    double lambda = 0.0;
    GrlCoefficient() = default;
    explicit GrlCoefficient(double l) : lambda(l) {
        if (!(l >= 0.0 && l <= 1.0)) {
            throw std::invalid_argument("grl: coefficient must lie in [0, 1]");
        }
    }
};

namespace detail {

template <class S>
std::vector<S>& grad_buf(const std::shared_ptr<typename TensorT<S>::Payload>& p) {
    if (p->grad.empty()) p->grad.assign(p->values.size(), S(0));
    return p->grad;
}

/// Walks every flat index of `shape` in row-major order while maintaining a
/// second flat index whose per-axis increment is given by `contrib` (use 0 to
/// pin an axis). fn(flat, mapped) is invoked once per element.
template <class Fn>
void for_each_mapped(const Shape& shape, const std::vector<std::int64_t>& contrib, Fn&& fn) {
    const int rank = static_cast<int>(shape.size());
    const std::int64_t n = shape_numel(shape);
    std::vector<std::int64_t> coord(rank, 0);
    std::int64_t mapped = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        fn(i, mapped);
        for (int d = rank - 1; d >= 0; --d) {
            ++coord[d];
            mapped += contrib[d];
            if (coord[d] < shape[d]) break;
            coord[d] = 0;
            mapped -= contrib[d] * shape[d];
        }
    }
}

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                                    std::int64_t pad, const char* axis) {
    const std::int64_t span = in + 2 * pad - k;
    if (span < 0) {
        throw std::invalid_argument(std::string("conv3d: kernel larger than padded input on ") + axis);
    }
    return span / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> relu(TapeT<S>& tape, const TensorT<S>& x) {
    std::vector<S> out(x.values().begin(), x.values().end());
    for (auto& v : out) {
        if (v < S(0)) v = S(0);
    }
    auto y = TensorT<S>::from_values(x.shape(), std::move(out));
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [xp, yp] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            // Subgradient at exactly 0 is 0.
            for (std::size_t i = 0; i < dx.size(); ++i) {
                if (xp->values[i] > S(0)) dx[i] += yp->grad[i];
            }
        });
    }
    return y;
}

template <class S>
TensorT<S> sigmoid(TapeT<S>& tape, const TensorT<S>& x) {
    std::vector<S> out(x.numel());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S v = xv[i];
        if (v >= S(0)) {
            out[i] = S(1) / (S(1) + std::exp(-v));
        } else {
            const S e = std::exp(v);
            out[i] = e / (S(1) + e);
        }
    }
    auto y = TensorT<S>::from_values(x.shape(), std::move(out));
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [xp, yp] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const S s = yp->values[i];
                dx[i] += yp->grad[i] * s * (S(1) - s);
            }
        });
    }
    return y;
}

template <class S>
TensorT<S> add(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("add: shape mismatch");
    std::vector<S> out(a.numel());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto y = TensorT<S>::from_values(a.shape(), std::move(out));
    if (tape.recording() && (a.requires_grad() || b.requires_grad())) {
        auto ap = a.payload();
        auto bp = b.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [ap, bp, yp] {
            if (yp->grad.empty()) return;
            if (ap->requires_grad) {
                auto& da = detail::grad_buf<S>(ap);
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += yp->grad[i];
            }
            if (bp->requires_grad) {
                auto& db = detail::grad_buf<S>(bp);
                for (std::size_t i = 0; i < db.size(); ++i) db[i] += yp->grad[i];
            }
        });
    }
    return y;
}

/// Hadamard product with broadcasting of `a` against `x`: every axis of `a`
/// must either match `x` or have extent 1. Gradients for `a` are summed over
/// the broadcast axes.
template <class S>
TensorT<S> broadcast_mul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& x) {
    if (a.rank() != x.rank()) throw std::invalid_argument("broadcast_mul: rank mismatch");
    const auto a_strides = row_major_strides(a.shape());
    std::vector<std::int64_t> contrib(a.rank(), 0);
    for (int d = 0; d < a.rank(); ++d) {
        if (a.extent(d) == x.extent(d)) {
            contrib[d] = a_strides[d];
        } else if (a.extent(d) != 1) {
            throw std::invalid_argument("broadcast_mul: shapes are not broadcastable");
        }
    }
    std::vector<S> out(x.numel());
    auto av = a.values();
    auto xv = x.values();
    detail::for_each_mapped(x.shape(), contrib,
                            [&](std::int64_t i, std::int64_t ai) { out[i] = av[ai] * xv[i]; });
    auto y = TensorT<S>::from_values(x.shape(), std::move(out));
    if (tape.recording() && (a.requires_grad() || x.requires_grad())) {
        auto ap = a.payload();
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        const Shape xshape = x.shape();
        tape.record(y, [ap, xp, yp, xshape, contrib] {
            if (yp->grad.empty()) return;
            if (xp->requires_grad) {
                auto& dx = detail::grad_buf<S>(xp);
                detail::for_each_mapped(xshape, contrib, [&](std::int64_t i, std::int64_t ai) {
                    dx[i] += ap->values[ai] * yp->grad[i];
                });
            }
            if (ap->requires_grad) {
                auto& da = detail::grad_buf<S>(ap);
                detail::for_each_mapped(xshape, contrib, [&](std::int64_t i, std::int64_t ai) {
                    da[ai] += xp->values[i] * yp->grad[i];
                });
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

/// Arithmetic mean over the given axes; pooled axes keep extent 1. The
/// backward rule distributes 1/pooled-count to each contributing cell.
template <class S>
TensorT<S> avg_pool_axes(TapeT<S>& tape, const TensorT<S>& x, std::vector<int> axes) {
    if (!x.defined()) throw std::invalid_argument("avg_pool_axes: empty tensor");
    if (axes.empty()) throw std::invalid_argument("avg_pool_axes: axes must be nonempty");
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (const int a : axes) {
        if (a < 0 || a >= x.rank()) throw std::invalid_argument("avg_pool_axes: axis index out of range");
    }

    Shape out_shape = x.shape();
    std::int64_t count = 1;
    for (const int a : axes) {
        count *= out_shape[a];
        out_shape[a] = 1;
    }
    const auto out_strides = row_major_strides(out_shape);
    std::vector<std::int64_t> contrib(x.rank(), 0);
    {
        std::size_t ai = 0;
        for (int d = 0; d < x.rank(); ++d) {
            const bool pooled = ai < axes.size() && axes[ai] == d;
            if (pooled) {
                ++ai;
            } else {
                contrib[d] = out_strides[d];
            }
        }
    }

    std::vector<S> out(static_cast<std::size_t>(shape_numel(out_shape)), S(0));
    auto xv = x.values();
    detail::for_each_mapped(x.shape(), contrib,
                            [&](std::int64_t i, std::int64_t oi) { out[oi] += xv[i]; });
    const S denom = static_cast<S>(count);
    for (auto& v : out) v /= denom;

    auto y = TensorT<S>::from_values(out_shape, std::move(out));
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        const Shape xshape = x.shape();
        tape.record(y, [xp, yp, xshape, contrib, denom] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            detail::for_each_mapped(xshape, contrib, [&](std::int64_t i, std::int64_t oi) {
                dx[i] += yp->grad[oi] / denom;
            });
        });
    }
    return y;
}

/// Same data, new shape; element count must be preserved.
template <class S>
TensorT<S> reshape(TapeT<S>& tape, const TensorT<S>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw std::invalid_argument("reshape: element count must be preserved");
    }
    auto y = TensorT<S>::from_values(std::move(shape),
                                     std::vector<S>(x.values().begin(), x.values().end()));
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [xp, yp] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += yp->grad[i];
        });
    }
    return y;
}

template <class S>
TensorT<S> sum_all(TapeT<S>& tape, const TensorT<S>& x) {
    S acc = S(0);
    for (const auto v : x.values()) acc += v;
    auto y = TensorT<S>::scalar_value(acc);
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [xp, yp] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            for (auto& v : dx) v += yp->grad[0];
        });
    }
    return y;
}

/// Dot product with fixed weights; handy for probing gradients.
template <class S>
TensorT<S> inner(TapeT<S>& tape, const TensorT<S>& x, std::vector<S> weights) {
    if (static_cast<std::int64_t>(weights.size()) != x.numel()) {
        throw std::invalid_argument("inner: weight count mismatch");
    }
    S acc = S(0);
    auto xv = x.values();
    for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * xv[i];
    auto y = TensorT<S>::scalar_value(acc);
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [xp, yp, w = std::move(weights)] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += w[i] * yp->grad[0];
        });
    }
    return y;
}

/// Concatenates along axis 0; all other extents must match.
template <class S>
TensorT<S> concat_rows(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != b.rank() || a.rank() < 1) {
        throw std::invalid_argument("concat_rows: rank mismatch");
    }
    for (int d = 1; d < a.rank(); ++d) {
        if (a.extent(d) != b.extent(d)) throw std::invalid_argument("concat_rows: trailing extents differ");
    }
    Shape out_shape = a.shape();
    out_shape[0] += b.extent(0);
    std::vector<S> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    auto y = TensorT<S>::from_values(std::move(out_shape), std::move(out));
    if (tape.recording() && (a.requires_grad() || b.requires_grad())) {
        auto ap = a.payload();
        auto bp = b.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [ap, bp, yp] {
            if (yp->grad.empty()) return;
            const std::size_t na = ap->values.size();
            if (ap->requires_grad) {
                auto& da = detail::grad_buf<S>(ap);
                for (std::size_t i = 0; i < na; ++i) da[i] += yp->grad[i];
            }
            if (bp->requires_grad) {
                auto& db = detail::grad_buf<S>(bp);
                for (std::size_t i = 0; i < db.size(); ++i) db[i] += yp->grad[na + i];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Affine map
// ---------------------------------------------------------------------------

/// y = W·x (+ b) applied along the trailing axis of x, batched over all
/// leading axes. W is (out × in); b is (out) or undefined for no bias.
template <class S>
TensorT<S> linear(TapeT<S>& tape, const TensorT<S>& w, const TensorT<S>& b, const TensorT<S>& x) {
    if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank-2 (out x in)");
    const std::int64_t out_dim = w.extent(0);
    const std::int64_t in_dim = w.extent(1);
    if (x.rank() < 1 || x.extent(x.rank() - 1) != in_dim) {
        throw std::invalid_argument("linear: trailing extent of x must equal the weight's input size");
    }
    if (b.defined() && (b.rank() != 1 || b.extent(0) != out_dim)) {
        throw std::invalid_argument("linear: bias extent must equal the weight's output size");
    }
    const std::int64_t rows = x.numel() / in_dim;
    Shape out_shape = x.shape();
    out_shape.back() = out_dim;

    std::vector<S> out(static_cast<std::size_t>(rows * out_dim));
    const S* wv = w.values().data();
    const S* xv = x.values().data();
    const S* bv = b.defined() ? b.values().data() : nullptr;
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* xrow = xv + r * in_dim;
        S* yrow = out.data() + r * out_dim;
        for (std::int64_t o = 0; o < out_dim; ++o) {
            S acc = bv ? bv[o] : S(0);
            const S* wrow = wv + o * in_dim;
            for (std::int64_t i = 0; i < in_dim; ++i) acc += wrow[i] * xrow[i];
            yrow[o] = acc;
        }
    }

    auto y = TensorT<S>::from_values(std::move(out_shape), std::move(out));
    const bool need = w.requires_grad() || x.requires_grad() || (b.defined() && b.requires_grad());
    if (tape.recording() && need) {
        auto wp = w.payload();
        auto xp = x.payload();
        auto bp = b.defined() ? b.payload() : nullptr;
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [wp, xp, bp, yp, rows, out_dim, in_dim] {
            if (yp->grad.empty()) return;
            const S* g = yp->grad.data();
            const S* wv = wp->values.data();
            const S* xv = xp->values.data();
            if (xp->requires_grad) {
                auto& dx = detail::grad_buf<S>(xp);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const S* grow = g + r * out_dim;
                    S* dxrow = dx.data() + r * in_dim;
                    for (std::int64_t o = 0; o < out_dim; ++o) {
                        const S gv = grow[o];
                        const S* wrow = wv + o * in_dim;
                        for (std::int64_t i = 0; i < in_dim; ++i) dxrow[i] += gv * wrow[i];
                    }
                }
            }
            if (wp->requires_grad) {
                auto& dw = detail::grad_buf<S>(wp);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const S* grow = g + r * out_dim;
                    const S* xrow = xv + r * in_dim;
                    for (std::int64_t o = 0; o < out_dim; ++o) {
                        const S gv = grow[o];
                        S* dwrow = dw.data() + o * in_dim;
                        for (std::int64_t i = 0; i < in_dim; ++i) dwrow[i] += gv * xrow[i];
                    }
                }
            }
            if (bp && bp->requires_grad) {
                auto& db = detail::grad_buf<S>(bp);
                for (std::int64_t r = 0; r < rows; ++r) {
                    const S* grow = g + r * out_dim;
                    for (std::int64_t o = 0; o < out_dim; ++o) db[o] += grow[o];
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// 3-D convolution (cross-correlation, zero padding)
// ---------------------------------------------------------------------------

namespace detail {

struct Conv3dGeom {
    std::int64_t batch, t_in, c_in, h_in, w_in;
    std::int64_t c_out, kt, kh, kw;
    std::int64_t t_out, h_out, w_out;
    Stride3 stride;
    Pad3 pad;
};

// Valid output range along W for a fixed kernel offset, so the innermost loop
// runs branch-free.
inline void w_range(std::int64_t off, std::int64_t sw, std::int64_t w_in, std::int64_t w_out,
                    std::int64_t& lo, std::int64_t& hi) {
    lo = off >= 0 ? 0 : (-off + sw - 1) / sw;
    const std::int64_t num = w_in - 1 - off;
    hi = num < 0 ? -1 : std::min(w_out - 1, num / sw);
}

}  // namespace detail

/// Cross-correlation over (T, H, W) with zero padding. Input is (N,T,C,H,W),
/// kernels are (Cout,Cin,kT,kH,kW), bias is (Cout) or undefined.
template <class S>
TensorT<S> conv3d(TapeT<S>& tape, const TensorT<S>& x, const TensorT<S>& kernels,
                  const TensorT<S>& bias, Stride3 stride, Pad3 pad) {
    if (x.rank() != 5) throw std::invalid_argument("conv3d: input must be rank-5 (N,T,C,H,W)");
    if (kernels.rank() != 5) {
        throw std::invalid_argument("conv3d: kernels must be rank-5 (Cout,Cin,kT,kH,kW)");
    }
    detail::Conv3dGeom g;
    g.batch = x.extent(0);
    g.t_in = x.extent(1);
    g.c_in = x.extent(2);
    g.h_in = x.extent(3);
    g.w_in = x.extent(4);
    g.c_out = kernels.extent(0);
    if (kernels.extent(1) != g.c_in) {
        throw std::invalid_argument("conv3d: kernel input channels do not match input");
    }
    g.kt = kernels.extent(2);
    g.kh = kernels.extent(3);
    g.kw = kernels.extent(4);
    if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != g.c_out)) {
        throw std::invalid_argument("conv3d: bias must be rank-1 with one entry per output channel");
    }
    if (stride.t < 1 || stride.h < 1 || stride.w < 1) {
        throw std::invalid_argument("conv3d: strides must be positive");
    }
    if (pad.t < 0 || pad.h < 0 || pad.w < 0) {
        throw std::invalid_argument("conv3d: padding must be nonnegative");
    }
    g.stride = stride;
    g.pad = pad;
    g.t_out = detail::conv_out_extent(g.t_in, g.kt, stride.t, pad.t, "T");
    g.h_out = detail::conv_out_extent(g.h_in, g.kh, stride.h, pad.h, "H");
    g.w_out = detail::conv_out_extent(g.w_in, g.kw, stride.w, pad.w, "W");

    std::vector<S> out(static_cast<std::size_t>(g.batch * g.t_out * g.c_out * g.h_out * g.w_out),
                       S(0));
    const S* xv = x.values().data();
    const S* kv = kernels.values().data();
    const S* bv = bias.defined() ? bias.values().data() : nullptr;

    for (std::int64_t n = 0; n < g.batch; ++n) {
        for (std::int64_t to = 0; to < g.t_out; ++to) {
            for (std::int64_t co = 0; co < g.c_out; ++co) {
                S* oplane = out.data() + ((n * g.t_out + to) * g.c_out + co) * g.h_out * g.w_out;
                if (bv) {
                    std::fill(oplane, oplane + g.h_out * g.w_out, bv[co]);
                }
                for (std::int64_t kti = 0; kti < g.kt; ++kti) {
                    const std::int64_t ti = to * g.stride.t + kti - g.pad.t;
                    if (ti < 0 || ti >= g.t_in) continue;
                    for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
                        const S* xin = xv + ((n * g.t_in + ti) * g.c_in + ci) * g.h_in * g.w_in;
                        const S* kslice = kv + ((co * g.c_in + ci) * g.kt + kti) * g.kh * g.kw;
                        for (std::int64_t ho = 0; ho < g.h_out; ++ho) {
                            S* orow = oplane + ho * g.w_out;
                            for (std::int64_t khi = 0; khi < g.kh; ++khi) {
                                const std::int64_t hi = ho * g.stride.h + khi - g.pad.h;
                                if (hi < 0 || hi >= g.h_in) continue;
                                const S* xrow = xin + hi * g.w_in;
                                const S* krow = kslice + khi * g.kw;
                                for (std::int64_t kwi = 0; kwi < g.kw; ++kwi) {
                                    const S kval = krow[kwi];
                                    const std::int64_t off = kwi - g.pad.w;
                                    std::int64_t lo, hi_w;
                                    detail::w_range(off, g.stride.w, g.w_in, g.w_out, lo, hi_w);
                                    for (std::int64_t wo = lo; wo <= hi_w; ++wo) {
                                        orow[wo] += kval * xrow[wo * g.stride.w + off];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    auto y = TensorT<S>::from_values({g.batch, g.t_out, g.c_out, g.h_out, g.w_out}, std::move(out));
    const bool need = x.requires_grad() || kernels.requires_grad() ||
                      (bias.defined() && bias.requires_grad());
    if (tape.recording() && need) {
        auto xp = x.payload();
        auto kp = kernels.payload();
        auto bp = bias.defined() ? bias.payload() : nullptr;
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [xp, kp, bp, yp, g] {
            if (yp->grad.empty()) return;
            const S* gv = yp->grad.data();
            const bool need_dx = xp->requires_grad;
            const bool need_dk = kp->requires_grad;
            if (bp && bp->requires_grad) {
                auto& db = detail::grad_buf<S>(bp);
                for (std::int64_t n = 0; n < g.batch; ++n) {
                    for (std::int64_t to = 0; to < g.t_out; ++to) {
                        for (std::int64_t co = 0; co < g.c_out; ++co) {
                            const S* gplane =
                                gv + ((n * g.t_out + to) * g.c_out + co) * g.h_out * g.w_out;
                            S acc = S(0);
                            for (std::int64_t i = 0; i < g.h_out * g.w_out; ++i) acc += gplane[i];
                            db[co] += acc;
                        }
                    }
                }
            }
            if (!need_dx && !need_dk) return;
            if (need_dx) detail::grad_buf<S>(xp);
            if (need_dk) detail::grad_buf<S>(kp);
            S* dx = need_dx ? xp->grad.data() : nullptr;
            S* dk = need_dk ? kp->grad.data() : nullptr;
            const S* xv = xp->values.data();
            const S* kv = kp->values.data();
            for (std::int64_t n = 0; n < g.batch; ++n) {
                for (std::int64_t to = 0; to < g.t_out; ++to) {
                    for (std::int64_t co = 0; co < g.c_out; ++co) {
                        const S* gplane =
                            gv + ((n * g.t_out + to) * g.c_out + co) * g.h_out * g.w_out;
                        for (std::int64_t kti = 0; kti < g.kt; ++kti) {
                            const std::int64_t ti = to * g.stride.t + kti - g.pad.t;
                            if (ti < 0 || ti >= g.t_in) continue;
                            for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
                                const std::int64_t xbase =
                                    ((n * g.t_in + ti) * g.c_in + ci) * g.h_in * g.w_in;
                                const std::int64_t kbase =
                                    ((co * g.c_in + ci) * g.kt + kti) * g.kh * g.kw;
                                for (std::int64_t ho = 0; ho < g.h_out; ++ho) {
                                    const S* grow = gplane + ho * g.w_out;
                                    for (std::int64_t khi = 0; khi < g.kh; ++khi) {
                                        const std::int64_t hi = ho * g.stride.h + khi - g.pad.h;
                                        if (hi < 0 || hi >= g.h_in) continue;
                                        const std::int64_t xrow = xbase + hi * g.w_in;
                                        const std::int64_t krow = kbase + khi * g.kw;
                                        for (std::int64_t kwi = 0; kwi < g.kw; ++kwi) {
                                            const std::int64_t off = kwi - g.pad.w;
                                            std::int64_t lo, hi_w;
                                            detail::w_range(off, g.stride.w, g.w_in, g.w_out, lo,
                                                            hi_w);
                                            if (need_dx) {
                                                const S kval = kv[krow + kwi];
                                                S* dxrow = dx + xrow;
                                                for (std::int64_t wo = lo; wo <= hi_w; ++wo) {
                                                    dxrow[wo * g.stride.w + off] += kval * grow[wo];
                                                }
                                            }
                                            if (need_dk) {
                                                const S* xr = xv + xrow;
                                                S acc = S(0);
                                                for (std::int64_t wo = lo; wo <= hi_w; ++wo) {
                                                    acc += grow[wo] * xr[wo * g.stride.w + off];
                                                }
                                                dk[krow + kwi] += acc;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Losses and training-path ops
// ---------------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label], max-subtracted for
/// stability. Backward is (softmax - onehot) / N.
template <class S>
TensorT<S> softmax_cross_entropy(TapeT<S>& tape, const TensorT<S>& logits,
                                 const std::vector<std::int64_t>& labels) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be (N x K)");
    const std::int64_t n = logits.extent(0);
    const std::int64_t k = logits.extent(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw std::invalid_argument("softmax_cross_entropy: label count must match batch size");
    }
    const S* lv = logits.values().data();
    std::vector<S> probs(static_cast<std::size_t>(n * k));
    double loss_acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t y = labels[i];
        if (y < 0 || y >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
        const S* row = lv + i * k;
        S m = row[0];
        for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        S denom = S(0);
        for (std::int64_t j = 0; j < k; ++j) {
            const S e = std::exp(row[j] - m);
            probs[i * k + j] = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] /= denom;
        loss_acc += std::log(static_cast<double>(denom)) - static_cast<double>(row[y] - m);
    }
    auto loss = TensorT<S>::scalar_value(static_cast<S>(loss_acc / static_cast<double>(n)));
    if (tape.recording() && logits.requires_grad()) {
        auto lp = logits.payload();
        auto yp = loss.payload();
        yp->requires_grad = true;
        tape.record(loss, [lp, yp, probs = std::move(probs), labels, n, k] {
            if (yp->grad.empty()) return;
            const S gscale = yp->grad[0] / static_cast<S>(n);
            auto& dl = detail::grad_buf<S>(lp);
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t j = 0; j < k; ++j) {
                    const S onehot = j == labels[i] ? S(1) : S(0);
                    dl[i * k + j] += gscale * (probs[i * k + j] - onehot);
                }
            }
        });
    }
    return loss;
}

/// Identity forward; backward multiplies the incoming gradient by -lambda.
template <class S>
TensorT<S> grad_reverse(TapeT<S>& tape, const TensorT<S>& x, GrlCoefficient coeff) {
    auto y = TensorT<S>::from_values(x.shape(),
                                     std::vector<S>(x.values().begin(), x.values().end()));
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        const S neg = static_cast<S>(-coeff.lambda);
        tape.record(y, [xp, yp, neg] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += neg * yp->grad[i];
        });
    }
    return y;
}

/// Inverted dropout: at train time keep with probability 1-p and scale kept
/// cells by 1/(1-p); identity at eval time. The mask consumes exactly numel
/// draws from the rng stream.
template <class S>
TensorT<S> dropout(TapeT<S>& tape, const TensorT<S>& x, double p, bool train_mode, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (!train_mode) return x;
    const S scale = static_cast<S>(1.0 / (1.0 - p));
    std::vector<S> mask(x.numel());
    for (auto& m : mask) m = rng.next_uniform() >= p ? scale : S(0);
    std::vector<S> out(x.numel());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    auto y = TensorT<S>::from_values(x.shape(), std::move(out));
    if (tape.recording() && x.requires_grad()) {
        auto xp = x.payload();
        auto yp = y.payload();
        yp->requires_grad = true;
        tape.record(y, [xp, yp, mask = std::move(mask)] {
            if (yp->grad.empty()) return;
            auto& dx = detail::grad_buf<S>(xp);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += mask[i] * yp->grad[i];
        });
    }
    return y;
}

}  // namespace cta
