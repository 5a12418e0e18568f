#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "fsloc/ops.hpp"
#include "fsloc/tensor.hpp"

namespace fsloc {

// Kernel-grid taps in row-major order; for 3x3 this enumerates
// {(-1,-1),(-1,0),...,(0,1),(1,1)}.
inline std::vector<std::pair<int, int>> kernel_grid_taps(int kh, int kw) {
    std::vector<std::pair<int, int>> taps;
    taps.reserve(static_cast<std::size_t>(kh) * kw);
    for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) taps.emplace_back(ky, kx);
    return taps;
}

// Horizontal/vertical cross neighborhood used by the gradient-branch
// convolution; corner taps of the 3x3 grid are structurally absent.
inline constexpr std::array<std::pair<int, int>, 5> kCrossTaps = {
    {{-1, 0}, {0, -1}, {0, 0}, {0, 1}, {1, 0}}};

template <typename T>
struct ConvSpec {
    Tensor<T> weights;  // out x in x kh x kw
    Tensor<T> bias;     // optional, shape {out}
    int stride = 1;
    int padding = 0;

    int out_channels() const { return weights.dim(0); }
    int in_channels() const { return weights.dim(1); }
    int kh() const { return weights.dim(2); }
    int kw() const { return weights.dim(3); }

    void validate() const {
        if (!weights.defined() || weights.ndim() != 4)
            throw ShapeError("ConvSpec weights must be a 4-D out x in x kh x kw tensor");
        if (bias.defined() && bias.numel() != out_channels())
            throw ShapeError(detail::msg("ConvSpec bias has ", bias.numel(),
                                         " entries for ", out_channels(), " output channels"));
        if (stride < 1) throw ValueError("ConvSpec stride must be >= 1");
        if (padding < 0) throw ValueError("ConvSpec padding must be >= 0");
    }

    int out_extent(int in) const { return (in + 2 * padding - kh()) / stride + 1; }
};

namespace detail {

template <typename T>
void check_conv_input(const char* op, const Tensor<T>& x, const ConvSpec<T>& spec) {
    spec.validate();
    if (x.ndim() != 4)
        throw ShapeError(detail::msg(op, " expects a 4-D input, got ", shape_str(x.shape())));
    if (x.dim(1) != spec.in_channels())
        throw ShapeError(detail::msg(op, ": input has ", x.dim(1), " channels, spec wants ",
                                     spec.in_channels()));
    const int oh = (x.dim(2) + 2 * spec.padding - spec.kh()) / spec.stride + 1;
    const int ow = (x.dim(3) + 2 * spec.padding - spec.kw()) / spec.stride + 1;
    if (oh < 1 || ow < 1)
        throw ShapeError(detail::msg(op, ": output extent ", oh, "x", ow,
                                     " < 1 for input ", shape_str(x.shape())));
}

}  // namespace detail

namespace detail {

// Valid output range along one axis for a given kernel tap: the indices o
// with 0 <= o*stride - pad + k < extent. Hoisting this out of the inner loop
// removes the per-sample bounds checks.
struct TapRange {
    int lo, hi;  // inclusive; empty when hi < lo
};

inline TapRange tap_range(int out_extent, int in_extent, int stride, int pad, int k) {
    TapRange r;
    r.lo = pad > k ? (pad - k + stride - 1) / stride : 0;
    r.hi = std::min(out_extent - 1, (in_extent - 1 + pad - k) / stride);
    return r;
}

}  // namespace detail

// y(p) = sum_k w_k * x(p + p_k) + bias, zero padding outside the input.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec<T>& spec, GradTape<T>* tape = nullptr) {
    detail::check_conv_input("conv2d", x, spec);
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = spec.out_channels(), KH = spec.kh(), KW = spec.kw();
    const int S = spec.stride, P = spec.padding;
    const int OH = (H + 2 * P - KH) / S + 1, OW = (W + 2 * P - KW) / S + 1;
    const bool rg = x.requires_grad() || spec.weights.requires_grad() ||
                    (spec.bias.defined() && spec.bias.requires_grad());
    Tensor<T> y = Tensor<T>::zeros({B, Co, OH, OW}, rg);
    T* out = y.data_mut();

    const long long oplane = static_cast<long long>(OH) * OW;
    const long long xplane = static_cast<long long>(H) * W;
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) {
            T* oz = out + (static_cast<long long>(b) * Co + co) * oplane;
            if (spec.bias.defined()) {
                const T bv = spec.bias.data()[co];
                for (long long i = 0; i < oplane; ++i) oz[i] = bv;
            }
            for (int ci = 0; ci < Ci; ++ci) {
                const T* xz = x.data() + (static_cast<long long>(b) * Ci + ci) * xplane;
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx) {
                        const T w = spec.weights(co, ci, ky, kx);
                        if (w == T(0)) continue;
                        const auto ys = detail::tap_range(OH, H, S, P, ky);
                        const auto xs = detail::tap_range(OW, W, S, P, kx);
                        if (xs.hi < xs.lo) continue;
                        const int cnt = xs.hi - xs.lo + 1;
                        for (int oy = ys.lo; oy <= ys.hi; ++oy) {
                            const int iy = oy * S - P + ky;
                            T* orow = oz + static_cast<long long>(oy) * OW + xs.lo;
                            const T* xp = xz + static_cast<long long>(iy) * W +
                                          (xs.lo * S - P + kx);
                            if (S == 1) {
                                for (int i = 0; i < cnt; ++i) orow[i] += w * xp[i];
                            } else {
                                for (int i = 0; i < cnt; ++i) orow[i] += w * xp[i * S];
                            }
                        }
                    }
            }
        }

    if (tape && rg) {
        tape->record("conv2d", [x, spec, y, B, Ci, H, W, Co, KH, KW, S, P, OH, OW] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            const long long oplane = static_cast<long long>(OH) * OW;
            const long long xplane = static_cast<long long>(H) * W;
            const bool need_dx = x.requires_grad();
            const bool need_dw = spec.weights.requires_grad();
            const bool need_db = spec.bias.defined() && spec.bias.requires_grad();
            for (int b = 0; b < B; ++b)
                for (int co = 0; co < Co; ++co) {
                    const T* gz = g + (static_cast<long long>(b) * Co + co) * oplane;
                    if (need_db) {
                        T acc = T(0);
                        for (long long i = 0; i < oplane; ++i) acc += gz[i];
                        spec.bias.grad_buffer()[static_cast<std::size_t>(co)] += acc;
                    }
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T* xz = x.data() + (static_cast<long long>(b) * Ci + ci) * xplane;
                        T* dxz = need_dx ? x.grad_buffer().data() +
                                               (static_cast<long long>(b) * Ci + ci) * xplane
                                         : nullptr;
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx) {
                                const T w = spec.weights(co, ci, ky, kx);
                                T dw = T(0);
                                const auto ys = detail::tap_range(OH, H, S, P, ky);
                                const auto xs = detail::tap_range(OW, W, S, P, kx);
                                if (xs.hi < xs.lo) continue;
                                const int cnt = xs.hi - xs.lo + 1;
                                for (int oy = ys.lo; oy <= ys.hi; ++oy) {
                                    const int iy = oy * S - P + ky;
                                    const T* grow = gz + static_cast<long long>(oy) * OW +
                                                    xs.lo;
                                    const long long base = static_cast<long long>(iy) * W +
                                                           (xs.lo * S - P + kx);
                                    const T* xp = xz + base;
                                    T* dxp = need_dx ? dxz + base : nullptr;
                                    if (S == 1) {
                                        for (int i = 0; i < cnt; ++i) dw += grow[i] * xp[i];
                                        if (need_dx)
                                            for (int i = 0; i < cnt; ++i)
                                                dxp[i] += w * grow[i];
                                    } else {
                                        for (int i = 0; i < cnt; ++i)
                                            dw += grow[i] * xp[i * S];
                                        if (need_dx)
                                            for (int i = 0; i < cnt; ++i)
                                                dxp[i * S] += w * grow[i];
                                    }
                                }
                                if (need_dw)
                                    spec.weights.grad_buffer()[static_cast<std::size_t>(
                                        spec.weights.index4(co, ci, ky, kx))] += dw;
                            }
                    }
                }
        });
    }
    return y;
}

// Per-tap fractional offsets and modulation masks at every output location.
// Offset channel 2k holds the y displacement of tap k, channel 2k+1 the x
// displacement; masks lie in [0,1] when produced through a sigmoid.
template <typename T>
struct DeformField {
    Tensor<T> offsets;  // B x 2N x OH x OW
    Tensor<T> masks;    // B x N x OH x OW
};

namespace detail {

// One bilinear sample site with zero padding outside the image.
struct SampleSite {
    int y0 = 0, y1 = 0, x0 = 0, x1 = 0;
    double wy = 0.0, wx = 0.0;  // weight of the (y1, x1) side
    bool in00 = false, in01 = false, in10 = false, in11 = false;
};

inline SampleSite make_site(double sy, double sx, int H, int W) {
    SampleSite s;
    const double fy = std::floor(sy), fx = std::floor(sx);
    s.y0 = static_cast<int>(fy);
    s.x0 = static_cast<int>(fx);
    s.y1 = s.y0 + 1;
    s.x1 = s.x0 + 1;
    s.wy = sy - fy;
    s.wx = sx - fx;
    s.in00 = s.y0 >= 0 && s.y0 < H && s.x0 >= 0 && s.x0 < W;
    s.in01 = s.y0 >= 0 && s.y0 < H && s.x1 >= 0 && s.x1 < W;
    s.in10 = s.y1 >= 0 && s.y1 < H && s.x0 >= 0 && s.x0 < W;
    s.in11 = s.y1 >= 0 && s.y1 < H && s.x1 >= 0 && s.x1 < W;
    return s;
}

template <typename T>
T sample_bilinear(const T* plane, int W, const SampleSite& s) {
    T v = T(0);
    const T wy1 = static_cast<T>(s.wy), wy0 = T(1) - wy1;
    const T wx1 = static_cast<T>(s.wx), wx0 = T(1) - wx1;
    if (s.in00) v += wy0 * wx0 * plane[static_cast<long long>(s.y0) * W + s.x0];
    if (s.in01) v += wy0 * wx1 * plane[static_cast<long long>(s.y0) * W + s.x1];
    if (s.in10) v += wy1 * wx0 * plane[static_cast<long long>(s.y1) * W + s.x0];
    if (s.in11) v += wy1 * wx1 * plane[static_cast<long long>(s.y1) * W + s.x1];
    return v;
}

}  // namespace detail

// y(p) = sum_k w_k * x(p + p_k + dp_k) * m_k. Fractional positions resolve
// by bilinear interpolation with zero padding; gradients flow to the input,
// weights, offsets and masks.
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const ConvSpec<T>& spec, const DeformField<T>& field,
                        GradTape<T>* tape = nullptr) {
    detail::check_conv_input("deform_conv2d", x, spec);
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = spec.out_channels(), KH = spec.kh(), KW = spec.kw();
    const int N = KH * KW, S = spec.stride, P = spec.padding;
    const int OH = (H + 2 * P - KH) / S + 1, OW = (W + 2 * P - KW) / S + 1;
    const Shape want_off{B, 2 * N, OH, OW}, want_mask{B, N, OH, OW};
    if (!field.offsets.defined() || field.offsets.shape() != want_off)
        throw ShapeError(detail::msg("deform_conv2d offsets must be ", shape_str(want_off),
                                     ", got ",
                                     field.offsets.defined() ? shape_str(field.offsets.shape())
                                                             : "undefined"));
    if (!field.masks.defined() || field.masks.shape() != want_mask)
        throw ShapeError(detail::msg("deform_conv2d masks must be ", shape_str(want_mask),
                                     ", got ",
                                     field.masks.defined() ? shape_str(field.masks.shape())
                                                           : "undefined"));
    for (long long i = 0; i < field.offsets.numel(); ++i)
        if (!std::isfinite(static_cast<double>(field.offsets.data()[i])))
            throw ValueError("deform_conv2d: non-finite offset");

    const bool rg = x.requires_grad() || spec.weights.requires_grad() ||
                    field.offsets.requires_grad() || field.masks.requires_grad() ||
                    (spec.bias.defined() && spec.bias.requires_grad());
    Tensor<T> y = Tensor<T>::zeros({B, Co, OH, OW}, rg);
    T* out = y.data_mut();

    const auto taps = kernel_grid_taps(KH, KW);
    const long long oplane = static_cast<long long>(OH) * OW;
    const long long xplane = static_cast<long long>(H) * W;
    std::vector<T> sampled(static_cast<std::size_t>(Ci));
    for (int b = 0; b < B; ++b) {
        const T* xb = x.data() + static_cast<long long>(b) * Ci * xplane;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                const long long at = static_cast<long long>(oy) * OW + ox;
                for (int k = 0; k < N; ++k) {
                    const double dy = static_cast<double>(
                        field.offsets.data()[field.offsets.index4(b, 2 * k, oy, ox)]);
                    const double dx = static_cast<double>(
                        field.offsets.data()[field.offsets.index4(b, 2 * k + 1, oy, ox)]);
                    const T m = field.masks.data()[field.masks.index4(b, k, oy, ox)];
                    const auto site = detail::make_site(oy * S - P + taps[k].first + dy,
                                                        ox * S - P + taps[k].second + dx, H, W);
                    for (int ci = 0; ci < Ci; ++ci)
                        sampled[static_cast<std::size_t>(ci)] =
                            detail::sample_bilinear(xb + ci * xplane, W, site);
                    for (int co = 0; co < Co; ++co) {
                        T acc = T(0);
                        const T* wrow =
                            spec.weights.data() +
                            (static_cast<long long>(co) * Ci) * N + k;
                        for (int ci = 0; ci < Ci; ++ci)
                            acc += wrow[static_cast<long long>(ci) * N] *
                                   sampled[static_cast<std::size_t>(ci)];
                        out[(static_cast<long long>(b) * Co + co) * oplane + at] += m * acc;
                    }
                }
                if (spec.bias.defined())
                    for (int co = 0; co < Co; ++co)
                        out[(static_cast<long long>(b) * Co + co) * oplane + at] +=
                            spec.bias.data()[co];
            }
    }

    if (tape && rg) {
        tape->record("deform_conv2d", [x, spec, field, y, taps, B, Ci, H, W, Co, N, S, P, OH,
                                       OW] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            const long long oplane = static_cast<long long>(OH) * OW;
            const long long xplane = static_cast<long long>(H) * W;
            const bool need_dx = x.requires_grad();
            const bool need_dw = spec.weights.requires_grad();
            const bool need_doff = field.offsets.requires_grad();
            const bool need_dm = field.masks.requires_grad();
            const bool need_db = spec.bias.defined() && spec.bias.requires_grad();
            std::vector<T> sampled(static_cast<std::size_t>(Ci));
            std::vector<T> dsdy(static_cast<std::size_t>(Ci));
            std::vector<T> dsdx(static_cast<std::size_t>(Ci));
            for (int b = 0; b < B; ++b) {
                const T* xb = x.data() + static_cast<long long>(b) * Ci * xplane;
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        const long long at = static_cast<long long>(oy) * OW + ox;
                        if (need_db)
                            for (int co = 0; co < Co; ++co)
                                spec.bias.grad_buffer()[static_cast<std::size_t>(co)] +=
                                    g[(static_cast<long long>(b) * Co + co) * oplane + at];
                        for (int k = 0; k < N; ++k) {
                            const double dy = static_cast<double>(
                                field.offsets.data()[field.offsets.index4(b, 2 * k, oy, ox)]);
                            const double dx = static_cast<double>(
                                field.offsets.data()[field.offsets.index4(b, 2 * k + 1, oy,
                                                                          ox)]);
                            const T m = field.masks.data()[field.masks.index4(b, k, oy, ox)];
                            const auto site =
                                detail::make_site(oy * S - P + taps[k].first + dy,
                                                  ox * S - P + taps[k].second + dx, H, W);
                            const T wy1 = static_cast<T>(site.wy), wy0 = T(1) - wy1;
                            const T wx1 = static_cast<T>(site.wx), wx0 = T(1) - wx1;
                            for (int ci = 0; ci < Ci; ++ci) {
                                const T* plane = xb + ci * xplane;
                                T v = T(0), ddy = T(0), ddx = T(0);
                                const T v00 = site.in00
                                                  ? plane[static_cast<long long>(site.y0) * W +
                                                          site.x0]
                                                  : T(0);
                                const T v01 = site.in01
                                                  ? plane[static_cast<long long>(site.y0) * W +
                                                          site.x1]
                                                  : T(0);
                                const T v10 = site.in10
                                                  ? plane[static_cast<long long>(site.y1) * W +
                                                          site.x0]
                                                  : T(0);
                                const T v11 = site.in11
                                                  ? plane[static_cast<long long>(site.y1) * W +
                                                          site.x1]
                                                  : T(0);
                                v = wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11);
                                ddy = wx0 * (v10 - v00) + wx1 * (v11 - v01);
                                ddx = wy0 * (v01 - v00) + wy1 * (v11 - v10);
                                sampled[static_cast<std::size_t>(ci)] = v;
                                dsdy[static_cast<std::size_t>(ci)] = ddy;
                                dsdx[static_cast<std::size_t>(ci)] = ddx;
                            }
                            T dmask = T(0), doffy = T(0), doffx = T(0);
                            for (int co = 0; co < Co; ++co) {
                                const T gv =
                                    g[(static_cast<long long>(b) * Co + co) * oplane + at];
                                if (gv == T(0)) continue;
                                const T* wrow = spec.weights.data() +
                                                (static_cast<long long>(co) * Ci) * N + k;
                                for (int ci = 0; ci < Ci; ++ci) {
                                    const T w = wrow[static_cast<long long>(ci) * N];
                                    if (need_dw)
                                        spec.weights.grad_buffer()[static_cast<std::size_t>(
                                            (static_cast<long long>(co) * Ci + ci) * N + k)] +=
                                            gv * m * sampled[static_cast<std::size_t>(ci)];
                                    dmask += gv * w * sampled[static_cast<std::size_t>(ci)];
                                    const T gchan = gv * w * m;
                                    doffy += gchan * dsdy[static_cast<std::size_t>(ci)];
                                    doffx += gchan * dsdx[static_cast<std::size_t>(ci)];
                                    if (need_dx) {
                                        T* dplane = x.grad_buffer().data() +
                                                    (static_cast<long long>(b) * Ci + ci) *
                                                        xplane;
                                        if (site.in00)
                                            dplane[static_cast<long long>(site.y0) * W +
                                                   site.x0] += gchan * wy0 * wx0;
                                        if (site.in01)
                                            dplane[static_cast<long long>(site.y0) * W +
                                                   site.x1] += gchan * wy0 * wx1;
                                        if (site.in10)
                                            dplane[static_cast<long long>(site.y1) * W +
                                                   site.x0] += gchan * wy1 * wx0;
                                        if (site.in11)
                                            dplane[static_cast<long long>(site.y1) * W +
                                                   site.x1] += gchan * wy1 * wx1;
                                    }
                                }
                            }
                            if (need_dm)
                                field.masks.grad_buffer()[static_cast<std::size_t>(
                                    field.masks.index4(b, k, oy, ox))] += dmask;
                            if (need_doff) {
                                field.offsets.grad_buffer()[static_cast<std::size_t>(
                                    field.offsets.index4(b, 2 * k, oy, ox))] += doffy;
                                field.offsets.grad_buffer()[static_cast<std::size_t>(
                                    field.offsets.index4(b, 2 * k + 1, oy, ox))] += doffx;
                            }
                        }
                    }
            }
        });
    }
    return y;
}

template <typename T>
struct CcdcSpec {
    Tensor<T> weights;  // out x in x 5, taps ordered as kCrossTaps
    T theta = T(0.5);

    int out_channels() const { return weights.dim(0); }
    int in_channels() const { return weights.dim(1); }

    void validate() const {
        if (!weights.defined() || weights.ndim() != 3 || weights.dim(2) != 5)
            throw ShapeError("CcdcSpec weights must be out x in x 5 over the HV cross");
        if (!(theta >= T(0) && theta <= T(1)))
            throw ValueError(detail::msg("ccdc theta must lie in [0,1], got ", theta));
    }
};

// y(p) = theta * sum_k w_k (x(p+p_k) - x(p)) + (1-theta) * sum_k w_k x(p+p_k)
// over the five cross taps; computed as sum_k w_k x(p+p_k) - theta*x(p)*sum_k w_k,
// stride 1 and padding 1 so the spatial extent is preserved.
template <typename T>
Tensor<T> ccdc_hv(const Tensor<T>& x, const CcdcSpec<T>& spec, GradTape<T>* tape = nullptr) {
    spec.validate();
    if (x.ndim() != 4)
        throw ShapeError(detail::msg("ccdc_hv expects a 4-D input, got ", shape_str(x.shape())));
    if (x.dim(1) != spec.in_channels())
        throw ShapeError(detail::msg("ccdc_hv: input has ", x.dim(1), " channels, spec wants ",
                                     spec.in_channels()));
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = spec.out_channels();
    const T theta = spec.theta;
    const bool rg = x.requires_grad() || spec.weights.requires_grad();
    Tensor<T> y = Tensor<T>::zeros({B, Co, H, W}, rg);
    T* out = y.data_mut();
    const long long plane = static_cast<long long>(H) * W;

    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) {
            T* oz = out + (static_cast<long long>(b) * Co + co) * plane;
            for (int ci = 0; ci < Ci; ++ci) {
                const T* xz = x.data() + (static_cast<long long>(b) * Ci + ci) * plane;
                const T* w = spec.weights.data() + (static_cast<long long>(co) * Ci + ci) * 5;
                const T wsum = w[0] + w[1] + w[2] + w[3] + w[4];
                for (int py = 0; py < H; ++py)
                    for (int px = 0; px < W; ++px) {
                        T acc = T(0);
                        for (int k = 0; k < 5; ++k) {
                            const int iy = py + kCrossTaps[static_cast<std::size_t>(k)].first;
                            const int ix = px + kCrossTaps[static_cast<std::size_t>(k)].second;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += w[k] * xz[static_cast<long long>(iy) * W + ix];
                        }
                        oz[static_cast<long long>(py) * W + px] +=
                            acc - theta * wsum * xz[static_cast<long long>(py) * W + px];
                    }
            }
        }

    if (tape && rg) {
        tape->record("ccdc_hv", [x, spec, y, B, Ci, H, W, Co, theta] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            const long long plane = static_cast<long long>(H) * W;
            const bool need_dx = x.requires_grad();
            const bool need_dw = spec.weights.requires_grad();
            for (int b = 0; b < B; ++b)
                for (int co = 0; co < Co; ++co) {
                    const T* gz = g + (static_cast<long long>(b) * Co + co) * plane;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T* xz = x.data() + (static_cast<long long>(b) * Ci + ci) * plane;
                        const T* w =
                            spec.weights.data() + (static_cast<long long>(co) * Ci + ci) * 5;
                        const T wsum = w[0] + w[1] + w[2] + w[3] + w[4];
                        T* dxz = need_dx ? x.grad_buffer().data() +
                                               (static_cast<long long>(b) * Ci + ci) * plane
                                         : nullptr;
                        T dw[5] = {T(0), T(0), T(0), T(0), T(0)};
                        for (int py = 0; py < H; ++py)
                            for (int px = 0; px < W; ++px) {
                                const T gv = gz[static_cast<long long>(py) * W + px];
                                if (gv == T(0)) continue;
                                const T xc = xz[static_cast<long long>(py) * W + px];
                                for (int k = 0; k < 5; ++k) {
                                    const int iy =
                                        py + kCrossTaps[static_cast<std::size_t>(k)].first;
                                    const int ix =
                                        px + kCrossTaps[static_cast<std::size_t>(k)].second;
                                    if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                                        // tap falls on zero padding; only the
                                        // -theta*x(p) part involves this weight
                                        dw[k] -= gv * theta * xc;
                                        continue;
                                    }
                                    dw[k] += gv * (xz[static_cast<long long>(iy) * W + ix] -
                                                   theta * xc);
                                    if (need_dx)
                                        dxz[static_cast<long long>(iy) * W + ix] += gv * w[k];
                                }
                                if (need_dx)
                                    dxz[static_cast<long long>(py) * W + px] -=
                                        gv * theta * wsum;
                            }
                        if (need_dw) {
                            auto& gw = spec.weights.grad_buffer();
                            for (int k = 0; k < 5; ++k)
                                gw[static_cast<std::size_t>(
                                    (static_cast<long long>(co) * Ci + ci) * 5 + k)] += dw[k];
                        }
                    }
                }
        });
    }
    return y;
}

// Channel c of the output is the 2-D correlation of query channel c with
// kernel channel c; odd kernel extents, same-padding, stride 1.
template <typename T>
Tensor<T> corr2d_depthwise(const Tensor<T>& query, const Tensor<T>& kernel,
                           GradTape<T>* tape = nullptr) {
    if (query.ndim() != 4 || kernel.ndim() != 4)
        throw ShapeError("corr2d_depthwise expects 4-D query and kernel");
    if (kernel.dim(0) != 1)
        throw ShapeError(detail::msg("corr2d_depthwise kernel batch must be 1, got ",
                                     kernel.dim(0)));
    if (query.dim(1) != kernel.dim(1))
        throw ShapeError(detail::msg("corr2d_depthwise: query has ", query.dim(1),
                                     " channels, kernel has ", kernel.dim(1)));
    if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0)
        throw ShapeError("corr2d_depthwise kernel extents must be odd");
    const int B = query.dim(0), C = query.dim(1), H = query.dim(2), W = query.dim(3);
    const int KH = kernel.dim(2), KW = kernel.dim(3), PH = KH / 2, PW = KW / 2;
    const bool rg = query.requires_grad() || kernel.requires_grad();
    Tensor<T> y = Tensor<T>::zeros({B, C, H, W}, rg);
    T* out = y.data_mut();
    const long long plane = static_cast<long long>(H) * W;

    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* qz = query.data() + (static_cast<long long>(b) * C + c) * plane;
            T* oz = out + (static_cast<long long>(b) * C + c) * plane;
            for (int ky = 0; ky < KH; ++ky)
                for (int kx = 0; kx < KW; ++kx) {
                    const T w = kernel(0, c, ky, kx);
                    if (w == T(0)) continue;
                    for (int oy = 0; oy < H; ++oy) {
                        const int iy = oy - PH + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int ox = 0; ox < W; ++ox) {
                            const int ix = ox - PW + kx;
                            if (ix < 0 || ix >= W) continue;
                            oz[static_cast<long long>(oy) * W + ox] +=
                                w * qz[static_cast<long long>(iy) * W + ix];
                        }
                    }
                }
        }

    if (tape && rg) {
        tape->record("corr2d_depthwise", [query, kernel, y, B, C, H, W, KH, KW, PH, PW] {
            if (!y.has_grad()) return;
            const T* g = y.grad().data();
            const long long plane = static_cast<long long>(H) * W;
            const bool need_dq = query.requires_grad();
            const bool need_dk = kernel.requires_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const T* qz = query.data() + (static_cast<long long>(b) * C + c) * plane;
                    const T* gz = g + (static_cast<long long>(b) * C + c) * plane;
                    T* dqz = need_dq ? query.grad_buffer().data() +
                                           (static_cast<long long>(b) * C + c) * plane
                                     : nullptr;
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const T w = kernel(0, c, ky, kx);
                            T dk = T(0);
                            for (int oy = 0; oy < H; ++oy) {
                                const int iy = oy - PH + ky;
                                if (iy < 0 || iy >= H) continue;
                                for (int ox = 0; ox < W; ++ox) {
                                    const int ix = ox - PW + kx;
                                    if (ix < 0 || ix >= W) continue;
                                    const T gv = gz[static_cast<long long>(oy) * W + ox];
                                    dk += gv * qz[static_cast<long long>(iy) * W + ix];
                                    if (need_dq)
                                        dqz[static_cast<long long>(iy) * W + ix] += w * gv;
                                }
                            }
                            if (need_dk)
                                kernel.grad_buffer()[static_cast<std::size_t>(
                                    kernel.index4(0, c, ky, kx))] += dk;
                        }
                }
        });
    }
    return y;
}

// Depth-2 stacks for the dual-branch correlation. The depth ordering is
// fixed at construction (deformation slice first, gradient slice second) and
// identical for the query and kernel stacks.
template <typename T>
struct DualStack {
    Tensor<T> query_deform;   // B x C x H x W
    Tensor<T> query_grad;     // B x C x H x W
    Tensor<T> kernel_deform;  // 1 x C x kh x kw
    Tensor<T> kernel_grad;    // 1 x C x kh x kw

    DualStack(Tensor<T> qd, Tensor<T> qg, Tensor<T> kd, Tensor<T> kg)
        : query_deform(std::move(qd)),
          query_grad(std::move(qg)),
          kernel_deform(std::move(kd)),
          kernel_grad(std::move(kg)) {
        if (!(query_deform.shape() == query_grad.shape()))
            throw ShapeError(detail::msg("DualStack query slices differ: ",
                                         shape_str(query_deform.shape()), " vs ",
                                         shape_str(query_grad.shape())));
        if (!(kernel_deform.shape() == kernel_grad.shape()))
            throw ShapeError(detail::msg("DualStack kernel slices differ: ",
                                         shape_str(kernel_deform.shape()), " vs ",
                                         shape_str(kernel_grad.shape())));
        if (query_deform.dim(1) != kernel_deform.dim(1))
            throw ShapeError(detail::msg("DualStack channel mismatch: query ",
                                         query_deform.dim(1), " vs kernel ",
                                         kernel_deform.dim(1)));
    }
};

// Depth kernel extent 2 over depth input extent 2 with no depth padding:
// the output collapses to a single depth slice, the sum of the per-branch
// depthwise correlations. The branches never mix.
template <typename T>
Tensor<T> conv3d_dual(const DualStack<T>& stack, GradTape<T>* tape = nullptr) {
    Tensor<T> deform = corr2d_depthwise(stack.query_deform, stack.kernel_deform, tape);
    Tensor<T> grad = corr2d_depthwise(stack.query_grad, stack.kernel_grad, tape);
    return add(deform, grad, tape);
}

}  // namespace fsloc
