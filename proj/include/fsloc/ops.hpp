#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fsloc/tensor.hpp"

namespace fsloc {

namespace detail {

// The single supported broadcast: b may have extent 1 on the channel axis
// while matching a on batch/height/width (the W + F_Q case).
template <typename T>
bool channel_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
    return a.ndim() == 4 && b.ndim() == 4 && b.dim(1) == 1 && a.dim(0) == b.dim(0) &&
           a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3);
}

template <typename T>
void check_elementwise(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape() || channel_broadcast(a, b)) return;
    throw ShapeError(detail::msg(op, ": shapes ", shape_str(a.shape()), " and ",
                                 shape_str(b.shape()),
                                 " neither match nor fit the channel broadcast rule"));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, GradTape<T>* tape = nullptr) {
    detail::check_elementwise("add", a, b);
    const bool bcast = !(a.shape() == b.shape());
    const long long n = a.numel();
    std::vector<T> out(static_cast<std::size_t>(n));
    if (!bcast) {
        for (long long i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];
    } else {
        const int B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < HW; ++i)
                    out[(static_cast<long long>(bi) * C + c) * HW + i] =
                        a.data()[(static_cast<long long>(bi) * C + c) * HW + i] +
                        b.data()[static_cast<long long>(bi) * HW + i];
    }
    Tensor<T> y(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (tape && y.requires_grad()) {
        tape->record("add", [a, b, y, bcast] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            const long long n = y.numel();
            if (a.requires_grad()) a.accumulate_grad(g, n);
            if (b.requires_grad()) {
                if (!bcast) {
                    b.accumulate_grad(g, n);
                } else {
                    auto& gb = b.grad_buffer();
                    const int B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
                    for (int bi = 0; bi < B; ++bi)
                        for (int c = 0; c < C; ++c)
                            for (int i = 0; i < HW; ++i)
                                gb[static_cast<std::size_t>(bi) * HW + i] +=
                                    g[(static_cast<long long>(bi) * C + c) * HW + i];
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, GradTape<T>* tape = nullptr) {
    detail::check_elementwise("mul", a, b);
    const bool bcast = !(a.shape() == b.shape());
    const long long n = a.numel();
    const int B = a.dim(0), C = bcast ? a.dim(1) : 1,
              HW = bcast ? a.dim(2) * a.dim(3) : 0;
    std::vector<T> out(static_cast<std::size_t>(n));
    if (!bcast) {
        for (long long i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
    } else {
        for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < HW; ++i)
                    out[(static_cast<long long>(bi) * C + c) * HW + i] =
                        a.data()[(static_cast<long long>(bi) * C + c) * HW + i] *
                        b.data()[static_cast<long long>(bi) * HW + i];
    }
    Tensor<T> y(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (tape && y.requires_grad()) {
        tape->record("mul", [a, b, y, bcast, B, C, HW] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            const long long n = y.numel();
            if (!bcast) {
                if (a.requires_grad()) {
                    auto& ga = a.grad_buffer();
                    for (long long i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
                }
                if (b.requires_grad()) {
                    auto& gb = b.grad_buffer();
                    for (long long i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
                }
            } else {
                if (a.requires_grad()) {
                    auto& ga = a.grad_buffer();
                    for (int bi = 0; bi < B; ++bi)
                        for (int c = 0; c < C; ++c)
                            for (int i = 0; i < HW; ++i)
                                ga[(static_cast<std::size_t>(bi) * C + c) * HW + i] +=
                                    g[(static_cast<long long>(bi) * C + c) * HW + i] *
                                    b.data()[static_cast<long long>(bi) * HW + i];
                }
                if (b.requires_grad()) {
                    auto& gb = b.grad_buffer();
                    for (int bi = 0; bi < B; ++bi)
                        for (int c = 0; c < C; ++c)
                            for (int i = 0; i < HW; ++i)
                                gb[static_cast<std::size_t>(bi) * HW + i] +=
                                    g[(static_cast<long long>(bi) * C + c) * HW + i] *
                                    a.data()[(static_cast<long long>(bi) * C + c) * HW + i];
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T k, GradTape<T>* tape = nullptr) {
    std::vector<T> out(x.values());
    for (auto& v : out) v *= k;
    Tensor<T> y(x.shape(), std::move(out), x.requires_grad());
    if (tape && y.requires_grad()) {
        tape->record("scale", [x, y, k] {
            if (!y.has_grad() || !x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            const T* g = y.grad().data();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += k * g[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
    T acc = T(0);
    for (long long i = 0; i < x.numel(); ++i) acc += x.data()[i];
    Tensor<T> y({1, 1, 1, 1}, {acc}, x.requires_grad());
    if (tape && y.requires_grad()) {
        tape->record("sum", [x, y] {
            if (!y.has_grad() || !x.requires_grad()) return;
            const T g = y.grad()[0];
            auto& gx = x.grad_buffer();
            for (auto& v : gx) v += g;
        });
    }
    return y;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope, GradTape<T>* tape = nullptr) {
    if (!(slope > T(0) && slope < T(1)))
        throw ValueError(detail::msg("leaky_relu slope must lie in (0,1), got ", slope));
    const long long n = x.numel();
    std::vector<T> out(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i) {
        const T v = x.data()[i];
        out[i] = v >= T(0) ? v : slope * v;
    }
    Tensor<T> y(x.shape(), std::move(out), x.requires_grad());
    if (tape && y.requires_grad()) {
        tape->record("leaky_relu", [x, y, slope] {
            if (!y.has_grad() || !x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            const T* g = y.grad().data();
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] += (x.data()[i] >= T(0) ? T(1) : slope) * g[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
    const long long n = x.numel();
    std::vector<T> out(static_cast<std::size_t>(n));
    for (long long i = 0; i < n; ++i)
        out[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
    Tensor<T> y(x.shape(), std::move(out), x.requires_grad());
    if (tape && y.requires_grad()) {
        tape->record("sigmoid", [x, y] {
            if (!y.has_grad() || !x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            const T* g = y.grad().data();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const T s = y.data()[i];
                gx[i] += s * (T(1) - s) * g[i];
            }
        });
    }
    return y;
}

// Standard floor/ceil bin boundaries; bins tile the input exactly and may
// overlap when the output is finer than the input.
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, int out_h, int out_w,
                            GradTape<T>* tape = nullptr) {
    if (x.ndim() != 4)
        throw ShapeError(detail::msg("adaptive_avg_pool expects a 4-D input, got ",
                                     shape_str(x.shape())));
    if (out_h < 1 || out_w < 1)
        throw ShapeError("adaptive_avg_pool output extents must be >= 1");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto bin_lo = [](int i, int in, int out) { return (i * in) / out; };
    auto bin_hi = [](int i, int in, int out) { return ((i + 1) * in + out - 1) / out; };
    Tensor<T> y = Tensor<T>::zeros({B, C, out_h, out_w}, x.requires_grad());
    T* out = y.data_mut();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = bin_lo(oy, H, out_h), y1 = bin_hi(oy, H, out_h);
                for (int ox = 0; ox < out_w; ++ox) {
                    const int x0 = bin_lo(ox, W, out_w), x1 = bin_hi(ox, W, out_w);
                    T acc = T(0);
                    for (int iy = y0; iy < y1; ++iy)
                        for (int ix = x0; ix < x1; ++ix) acc += x(b, c, iy, ix);
                    out[y.index4(b, c, oy, ox)] =
                        acc / static_cast<T>((y1 - y0) * (x1 - x0));
                }
            }
    if (tape && y.requires_grad()) {
        tape->record("adaptive_avg_pool", [x, y, out_h, out_w, bin_lo, bin_hi] {
            if (!y.has_grad() || !x.requires_grad()) return;
            const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
            auto& gx = x.grad_buffer();
            const T* g = y.grad().data();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int oy = 0; oy < out_h; ++oy) {
                        const int y0 = bin_lo(oy, H, out_h), y1 = bin_hi(oy, H, out_h);
                        for (int ox = 0; ox < out_w; ++ox) {
                            const int x0 = bin_lo(ox, W, out_w), x1 = bin_hi(ox, W, out_w);
                            const T share = g[y.index4(b, c, oy, ox)] /
                                            static_cast<T>((y1 - y0) * (x1 - x0));
                            for (int iy = y0; iy < y1; ++iy)
                                for (int ix = x0; ix < x1; ++ix)
                                    gx[static_cast<std::size_t>(x.index4(b, c, iy, ix))] += share;
                        }
                    }
        });
    }
    return y;
}

namespace detail {

// align-corners-false sampling grid with edge clamping.
inline void upsample_axis(int in, int out, std::vector<int>& i0, std::vector<int>& i1,
                          std::vector<double>& w1) {
    i0.resize(static_cast<std::size_t>(out));
    i1.resize(static_cast<std::size_t>(out));
    w1.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        int lo = static_cast<int>(src);
        if (lo > in - 1) lo = in - 1;
        i0[static_cast<std::size_t>(o)] = lo;
        i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in - 1);
        w1[static_cast<std::size_t>(o)] = src - lo;
    }
}

}  // namespace detail

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int out_h, int out_w,
                            GradTape<T>* tape = nullptr) {
    if (x.ndim() != 4)
        throw ShapeError(detail::msg("bilinear_upsample expects a 4-D input, got ",
                                     shape_str(x.shape())));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h < H || out_w < W)
        throw ShapeError(detail::msg("bilinear_upsample cannot shrink ", H, "x", W, " to ",
                                     out_h, "x", out_w));
    std::vector<int> y0, y1, x0, x1;
    std::vector<double> wy, wx;
    detail::upsample_axis(H, out_h, y0, y1, wy);
    detail::upsample_axis(W, out_w, x0, x1, wx);
    Tensor<T> y = Tensor<T>::zeros({B, C, out_h, out_w}, x.requires_grad());
    T* out = y.data_mut();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < out_h; ++oy) {
                const T v0w = static_cast<T>(1.0 - wy[static_cast<std::size_t>(oy)]);
                const T v1w = static_cast<T>(wy[static_cast<std::size_t>(oy)]);
                for (int ox = 0; ox < out_w; ++ox) {
                    const T h0w = static_cast<T>(1.0 - wx[static_cast<std::size_t>(ox)]);
                    const T h1w = static_cast<T>(wx[static_cast<std::size_t>(ox)]);
                    out[y.index4(b, c, oy, ox)] =
                        v0w * (h0w * x(b, c, y0[oy], x0[ox]) + h1w * x(b, c, y0[oy], x1[ox])) +
                        v1w * (h0w * x(b, c, y1[oy], x0[ox]) + h1w * x(b, c, y1[oy], x1[ox]));
                }
            }
    if (tape && y.requires_grad()) {
        tape->record("bilinear_upsample", [x, y, out_h, out_w, y0, y1, x0, x1, wy, wx] {
            if (!y.has_grad() || !x.requires_grad()) return;
            const int B = x.dim(0), C = x.dim(1);
            auto& gx = x.grad_buffer();
            const T* g = y.grad().data();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int oy = 0; oy < out_h; ++oy) {
                        const T v0w = static_cast<T>(1.0 - wy[static_cast<std::size_t>(oy)]);
                        const T v1w = static_cast<T>(wy[static_cast<std::size_t>(oy)]);
                        for (int ox = 0; ox < out_w; ++ox) {
                            const T h0w = static_cast<T>(1.0 - wx[static_cast<std::size_t>(ox)]);
                            const T h1w = static_cast<T>(wx[static_cast<std::size_t>(ox)]);
                            const T gv = g[y.index4(b, c, oy, ox)];
                            gx[static_cast<std::size_t>(x.index4(b, c, y0[oy], x0[ox]))] += v0w * h0w * gv;
                            gx[static_cast<std::size_t>(x.index4(b, c, y0[oy], x1[ox]))] += v0w * h1w * gv;
                            gx[static_cast<std::size_t>(x.index4(b, c, y1[oy], x0[ox]))] += v1w * h0w * gv;
                            gx[static_cast<std::size_t>(x.index4(b, c, y1[oy], x1[ox]))] += v1w * h1w * gv;
                        }
                    }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target, GradTape<T>* tape = nullptr) {
    if (!(pred.shape() == target.shape()))
        throw ShapeError(detail::msg("mse_loss shape mismatch: ", shape_str(pred.shape()),
                                     " vs ", shape_str(target.shape())));
    const long long n = pred.numel();
    T acc = T(0);
    for (long long i = 0; i < n; ++i) {
        const T d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    Tensor<T> y({1, 1, 1, 1}, {acc / static_cast<T>(n)},
                pred.requires_grad() || target.requires_grad());
    if (tape && y.requires_grad()) {
        tape->record("mse_loss", [pred, target, y, n] {
            if (!y.has_grad()) return;
            const T g = y.grad()[0];
            const T coef = T(2) * g / static_cast<T>(n);
            if (pred.requires_grad()) {
                auto& gp = pred.grad_buffer();
                for (long long i = 0; i < n; ++i)
                    gp[i] += coef * (pred.data()[i] - target.data()[i]);
            }
            if (target.requires_grad()) {
                auto& gt = target.grad_buffer();
                for (long long i = 0; i < n; ++i)
                    gt[i] -= coef * (pred.data()[i] - target.data()[i]);
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs, GradTape<T>* tape = nullptr) {
    if (xs.empty()) throw ValueError("concat_channels on an empty list");
    const int B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int C = 0;
    bool rg = false;
    for (const auto& x : xs) {
        if (x.ndim() != 4 || x.dim(0) != B || x.dim(2) != H || x.dim(3) != W)
            throw ShapeError(detail::msg("concat_channels needs matching B/H/W, got ",
                                         shape_str(x.shape()), " vs ",
                                         shape_str(xs[0].shape())));
        C += x.dim(1);
        rg = rg || x.requires_grad();
    }
    Tensor<T> y = Tensor<T>::zeros({B, C, H, W}, rg);
    T* out = y.data_mut();
    const long long plane = static_cast<long long>(H) * W;
    for (int b = 0; b < B; ++b) {
        long long co = 0;
        for (const auto& x : xs) {
            const long long span = static_cast<long long>(x.dim(1)) * plane;
            std::copy_n(x.data() + static_cast<long long>(b) * span, span,
                        out + (static_cast<long long>(b) * C + co) * plane);
            co += x.dim(1);
        }
    }
    if (tape && y.requires_grad()) {
        tape->record("concat_channels", [xs, y, B, C, plane] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            for (int b = 0; b < B; ++b) {
                long long co = 0;
                for (const auto& x : xs) {
                    const long long span = static_cast<long long>(x.dim(1)) * plane;
                    if (x.requires_grad()) {
                        auto& gx = x.grad_buffer();
                        const T* src = g + (static_cast<long long>(b) * C + co) * plane;
                        T* dst = gx.data() + static_cast<long long>(b) * span;
                        for (long long i = 0; i < span; ++i) dst[i] += src[i];
                    }
                    co += x.dim(1);
                }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c_begin, int c_end,
                         GradTape<T>* tape = nullptr) {
    if (x.ndim() != 4 || c_begin < 0 || c_end > x.dim(1) || c_begin >= c_end)
        throw ShapeError(detail::msg("slice_channels [", c_begin, ",", c_end, ") invalid for ",
                                     shape_str(x.shape())));
    const int B = x.dim(0), C = c_end - c_begin, H = x.dim(2), W = x.dim(3);
    const long long plane = static_cast<long long>(H) * W;
    Tensor<T> y = Tensor<T>::zeros({B, C, H, W}, x.requires_grad());
    for (int b = 0; b < B; ++b)
        std::copy_n(x.data() + (static_cast<long long>(b) * x.dim(1) + c_begin) * plane,
                    static_cast<long long>(C) * plane,
                    y.data_mut() + static_cast<long long>(b) * C * plane);
    if (tape && y.requires_grad()) {
        tape->record("slice_channels", [x, y, c_begin, B, C, plane] {
            if (!y.has_grad() || !x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            const T* g = y.grad().data();
            for (int b = 0; b < B; ++b) {
                const T* src = g + static_cast<long long>(b) * C * plane;
                T* dst = gx.data() + (static_cast<long long>(b) * x.dim(1) + c_begin) * plane;
                for (long long i = 0; i < static_cast<long long>(C) * plane; ++i)
                    dst[i] += src[i];
            }
        });
    }
    return y;
}

// Half-open spatial window [y_begin, y_end) x [x_begin, x_end).
template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& x, int y_begin, int y_end, int x_begin, int x_end,
                       GradTape<T>* tape = nullptr) {
    if (x.ndim() != 4 || y_begin < 0 || x_begin < 0 || y_end > x.dim(2) || x_end > x.dim(3) ||
        y_begin >= y_end || x_begin >= x_end)
        throw ShapeError(detail::msg("crop_spatial window [", y_begin, ",", y_end, ")x[",
                                     x_begin, ",", x_end, ") invalid for ",
                                     shape_str(x.shape())));
    const int B = x.dim(0), C = x.dim(1), H = y_end - y_begin, W = x_end - x_begin;
    Tensor<T> y = Tensor<T>::zeros({B, C, H, W}, x.requires_grad());
    T* out = y.data_mut();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int iy = 0; iy < H; ++iy)
                for (int ix = 0; ix < W; ++ix)
                    out[y.index4(b, c, iy, ix)] = x(b, c, y_begin + iy, x_begin + ix);
    if (tape && y.requires_grad()) {
        tape->record("crop_spatial", [x, y, y_begin, x_begin] {
            if (!y.has_grad() || !x.requires_grad()) return;
            auto& gx = x.grad_buffer();
            const T* g = y.grad().data();
            const int B = y.dim(0), C = y.dim(1), H = y.dim(2), W = y.dim(3);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int iy = 0; iy < H; ++iy)
                        for (int ix = 0; ix < W; ++ix)
                            gx[static_cast<std::size_t>(
                                x.index4(b, c, y_begin + iy, x_begin + ix))] +=
                                g[y.index4(b, c, iy, ix)];
        });
    }
    return y;
}

// Cosine similarity along the channel axis; output is B x 1 x H x W with
// every entry in [-1, 1]. Zero columns are handled by the epsilon guard on
// the denominator, max(|a||b|, eps).
template <typename T>
Tensor<T> channel_cosine(const Tensor<T>& a, const Tensor<T>& b, T eps = T(1e-12),
                         GradTape<T>* tape = nullptr) {
    if (a.ndim() != 4 || !(a.shape() == b.shape()))
        throw ShapeError(detail::msg("channel_cosine needs equal 4-D shapes, got ",
                                     shape_str(a.shape()), " vs ", shape_str(b.shape())));
    const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    const long long plane = static_cast<long long>(H) * W;
    Tensor<T> y = Tensor<T>::zeros({B, 1, H, W}, a.requires_grad() || b.requires_grad());
    T* out = y.data_mut();
    for (int bi = 0; bi < B; ++bi)
        for (long long i = 0; i < plane; ++i) {
            T dot = T(0), na2 = T(0), nb2 = T(0);
            for (int c = 0; c < C; ++c) {
                const T av = a.data()[(static_cast<long long>(bi) * C + c) * plane + i];
                const T bv = b.data()[(static_cast<long long>(bi) * C + c) * plane + i];
                dot += av * bv;
                na2 += av * av;
                nb2 += bv * bv;
            }
            const T den = std::max(std::sqrt(na2) * std::sqrt(nb2), eps);
            out[static_cast<long long>(bi) * plane + i] = dot / den;
        }
    if (tape && y.requires_grad()) {
        tape->record("channel_cosine", [a, b, y, eps, B, C, plane] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            for (int bi = 0; bi < B; ++bi)
                for (long long i = 0; i < plane; ++i) {
                    const T gv = g[static_cast<long long>(bi) * plane + i];
                    if (gv == T(0)) continue;
                    T dot = T(0), na2 = T(0), nb2 = T(0);
                    for (int c = 0; c < C; ++c) {
                        const T av = a.data()[(static_cast<long long>(bi) * C + c) * plane + i];
                        const T bv = b.data()[(static_cast<long long>(bi) * C + c) * plane + i];
                        dot += av * bv;
                        na2 += av * av;
                        nb2 += bv * bv;
                    }
                    const T prod = std::sqrt(na2) * std::sqrt(nb2);
                    const bool guarded = !(prod > eps);
                    const T den = guarded ? eps : prod;
                    const T w = dot / den;
                    for (int c = 0; c < C; ++c) {
                        const long long k = (static_cast<long long>(bi) * C + c) * plane + i;
                        const T av = a.data()[k];
                        const T bv = b.data()[k];
                        if (a.requires_grad()) {
                            const T da = guarded ? bv / den : bv / den - w * av / na2;
                            a.grad_buffer()[static_cast<std::size_t>(k)] += gv * da;
                        }
                        if (b.requires_grad()) {
                            const T db = guarded ? av / den : av / den - w * bv / nb2;
                            b.grad_buffer()[static_cast<std::size_t>(k)] += gv * db;
                        }
                    }
                }
        });
    }
    return y;
}

}  // namespace fsloc
