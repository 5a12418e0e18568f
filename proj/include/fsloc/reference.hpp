#pragma once

// Brute-force reference evaluators and the finite-difference harness. These
// deliberately restate the defining formulas as literal nested loops over a
// materialized zero-padded input, independent of the production kernels in
// conv.hpp, so that the two routes can be compared numerically.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "fsloc/conv.hpp"
#include "fsloc/point.hpp"
#include "fsloc/tensor.hpp"

namespace fsloc::reference {

namespace detail {

// Zero-padded copy of one input plane.
template <typename T>
std::vector<T> pad_plane(const Tensor<T>& x, int b, int c, int pad) {
    const int H = x.dim(2), W = x.dim(3);
    const int PH = H + 2 * pad, PW = W + 2 * pad;
    std::vector<T> out(static_cast<std::size_t>(PH) * PW, T(0));
    for (int iy = 0; iy < H; ++iy)
        for (int ix = 0; ix < W; ++ix)
            out[static_cast<std::size_t>(iy + pad) * PW + (ix + pad)] = x(b, c, iy, ix);
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec<T>& spec) {
    const int B = x.dim(0), Ci = x.dim(1);
    const int KH = spec.kh(), KW = spec.kw(), S = spec.stride, P = spec.padding;
    const int OH = spec.out_extent(x.dim(2)), OW = spec.out_extent(x.dim(3));
    const int PW = x.dim(3) + 2 * P;
    Tensor<T> y = Tensor<T>::zeros({B, spec.out_channels(), OH, OW});
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < spec.out_channels(); ++co)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = spec.bias.defined() ? spec.bias.data()[co] : T(0);
                    for (int ci = 0; ci < Ci; ++ci) {
                        const auto padded = detail::pad_plane(x, b, ci, P);
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx)
                                acc += spec.weights(co, ci, ky, kx) *
                                       padded[static_cast<std::size_t>(oy * S + ky) * PW +
                                              (ox * S + kx)];
                    }
                    y.data_mut()[y.index4(b, co, oy, ox)] = acc;
                }
    return y;
}

// Independent bilinear lookup used only by the deformable reference.
template <typename T>
T bilinear_zero_pad(const Tensor<T>& x, int b, int c, double sy, double sx) {
    const int H = x.dim(2), W = x.dim(3);
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    T acc = T(0);
    for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
            const int yy = y0 + dy, xx = x0 + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            const double wy = 1.0 - std::abs(sy - yy);
            const double wx = 1.0 - std::abs(sx - xx);
            acc += static_cast<T>(wy * wx) * x(b, c, yy, xx);
        }
    return acc;
}

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const ConvSpec<T>& spec,
                        const DeformField<T>& field) {
    const int B = x.dim(0), Ci = x.dim(1);
    const int KH = spec.kh(), KW = spec.kw(), S = spec.stride, P = spec.padding;
    const int OH = spec.out_extent(x.dim(2)), OW = spec.out_extent(x.dim(3));
    const auto taps = kernel_grid_taps(KH, KW);
    Tensor<T> y = Tensor<T>::zeros({B, spec.out_channels(), OH, OW});
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < spec.out_channels(); ++co)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = spec.bias.defined() ? spec.bias.data()[co] : T(0);
                    for (int ci = 0; ci < Ci; ++ci)
                        for (std::size_t k = 0; k < taps.size(); ++k) {
                            const double dy =
                                field.offsets(b, static_cast<int>(2 * k), oy, ox);
                            const double dx =
                                field.offsets(b, static_cast<int>(2 * k + 1), oy, ox);
                            const T m = field.masks(b, static_cast<int>(k), oy, ox);
                            acc += spec.weights(co, ci, static_cast<int>(k) / KW,
                                                static_cast<int>(k) % KW) *
                                   bilinear_zero_pad(x, b, ci,
                                                     oy * S - P + taps[k].first + dy,
                                                     ox * S - P + taps[k].second + dx) *
                                   m;
                        }
                    y.data_mut()[y.index4(b, co, oy, ox)] = acc;
                }
    return y;
}

// Literal two-sum evaluation of the cross central difference formula.
template <typename T>
Tensor<T> ccdc_hv(const Tensor<T>& x, const CcdcSpec<T>& spec) {
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y = Tensor<T>::zeros({B, spec.out_channels(), H, W});
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < spec.out_channels(); ++co)
            for (int py = 0; py < H; ++py)
                for (int px = 0; px < W; ++px) {
                    T grad_term = T(0), intensity_term = T(0);
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T center = x(b, ci, py, px);
                        for (int k = 0; k < 5; ++k) {
                            const int iy = py + kCrossTaps[static_cast<std::size_t>(k)].first;
                            const int ix = px + kCrossTaps[static_cast<std::size_t>(k)].second;
                            const T tap = (iy < 0 || iy >= H || ix < 0 || ix >= W)
                                              ? T(0)
                                              : x(b, ci, iy, ix);
                            const T w = spec.weights.data()[(static_cast<long long>(co) * Ci +
                                                             ci) *
                                                                5 +
                                                            k];
                            grad_term += w * (tap - center);
                            intensity_term += w * tap;
                        }
                    }
                    y.data_mut()[y.index4(b, co, py, px)] =
                        spec.theta * grad_term + (T(1) - spec.theta) * intensity_term;
                }
    return y;
}

template <typename T>
Tensor<T> corr2d_depthwise(const Tensor<T>& query, const Tensor<T>& kernel) {
    const int B = query.dim(0), C = query.dim(1), H = query.dim(2), W = query.dim(3);
    const int KH = kernel.dim(2), KW = kernel.dim(3);
    Tensor<T> y = Tensor<T>::zeros({B, C, H, W});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < H; ++oy)
                for (int ox = 0; ox < W; ++ox) {
                    T acc = T(0);
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const int iy = oy - KH / 2 + ky;
                            const int ix = ox - KW / 2 + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += kernel(0, c, ky, kx) * query(b, c, iy, ix);
                        }
                    y.data_mut()[y.index4(b, c, oy, ox)] = acc;
                }
    return y;
}

template <typename T>
Tensor<T> conv3d_dual(const DualStack<T>& stack) {
    Tensor<T> a = reference::corr2d_depthwise(stack.query_deform, stack.kernel_deform);
    Tensor<T> b = reference::corr2d_depthwise(stack.query_grad, stack.kernel_grad);
    Tensor<T> y = Tensor<T>::zeros(a.shape());
    for (long long i = 0; i < a.numel(); ++i)
        y.data_mut()[i] = a.data()[i] + b.data()[i];
    return y;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(fsloc::detail::msg("shape mismatch: ", shape_str(a.shape()), " vs ",
                                            shape_str(b.shape())));
    double m = 0.0;
    for (long long i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) -
                                 static_cast<double>(b.data()[i])));
    return m;
}

// Independent window-average evaluator for adaptive pooling (same floor/ceil
// bin rule, direct summation).
template <typename T>
T window_average(const Tensor<T>& x, int b, int c, int y_lo, int y_hi, int x_lo, int x_hi) {
    T acc = T(0);
    for (int iy = y_lo; iy < y_hi; ++iy)
        for (int ix = x_lo; ix < x_hi; ++ix) acc += x(b, c, iy, ix);
    return acc / static_cast<T>((y_hi - y_lo) * (x_hi - x_lo));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient harness.
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    long long checked = 0;
};

// Relative error with a unit floor, so that near-zero gradients are judged
// on absolute error instead of blowing up the ratio.
inline double grad_rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), 1.0});
}

// Central finite differences through a from-scratch re-evaluation of the
// loss. `loss_fn` must be a pure deterministic function of the current
// parameter values; `coords` selects the flat indices to probe.
template <typename T>
GradCheckReport finite_diff_check(Tensor<T> param, const std::vector<long long>& coords,
                                  const std::function<double()>& loss_fn,
                                  const std::vector<T>& analytic_grad, double h = 1e-5) {
    GradCheckReport report;
    for (long long idx : coords) {
        T* slot = param.data_mut() + idx;
        const T saved = *slot;
        const double step = h * std::max(1.0, std::abs(static_cast<double>(saved)));
        *slot = saved + static_cast<T>(step);
        const double up = loss_fn();
        *slot = saved - static_cast<T>(step);
        const double down = loss_fn();
        *slot = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = static_cast<double>(analytic_grad[static_cast<std::size_t>(idx)]);
        report.max_rel_err = std::max(report.max_rel_err, grad_rel_err(analytic, numeric));
        ++report.checked;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Brute-force point matching.
// ---------------------------------------------------------------------------

struct BruteMatchResult {
    int tp = 0;
    double total_distance = 0.0;
};

namespace detail {

inline void brute_match_rec(const std::vector<std::vector<double>>& dist, double sigma,
                            std::size_t i, std::vector<bool>& used, int tp, double total,
                            BruteMatchResult& best) {
    if (i == dist.size()) {
        if (tp > best.tp || (tp == best.tp && total < best.total_distance)) {
            best.tp = tp;
            best.total_distance = total;
        }
        return;
    }
    brute_match_rec(dist, sigma, i + 1, used, tp, total, best);  // leave pred i unmatched
    for (std::size_t j = 0; j < used.size(); ++j) {
        if (used[j] || dist[i][j] > sigma) continue;
        used[j] = true;
        brute_match_rec(dist, sigma, i + 1, used, tp + 1, total + dist[i][j], best);
        used[j] = false;
    }
}

}  // namespace detail

// Exhaustive one-to-one matching: maximum pair count first, minimum total
// distance among those. Feasible only for small instances.
inline BruteMatchResult brute_force_match(const PointList& pred, const PointList& gt,
                                          double sigma) {
    std::vector<std::vector<double>> dist(pred.size(), std::vector<double>(gt.size(), 0.0));
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = 0; j < gt.size(); ++j)
            dist[i][j] = point_distance(pred[i], gt[j]);
    BruteMatchResult best;
    best.total_distance = std::numeric_limits<double>::infinity();
    if (pred.empty()) {
        best.total_distance = 0.0;
        return best;
    }
    std::vector<bool> used(gt.size(), false);
    detail::brute_match_rec(dist, sigma, 0, used, 0, 0.0, best);
    return best;
}

// Nearest annotated point by direct scan; oracle for the distance transform.
inline double brute_force_nearest(const PointList& pts, double px, double py) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) best = std::min(best, std::hypot(px - p.x, py - p.y));
    return best;
}

}  // namespace fsloc::reference
