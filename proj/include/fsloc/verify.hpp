#pragma once

// Self-contained verification suites: oracle equivalence for every kernel,
// degenerate reductions, finite-difference gradient checks, self-query
// properties, location-map roundtrips, matching against brute force, and the
// metric formula fixtures. The CLI `verify` command and the acceptance tests
// both run these.

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "fsloc/locmap.hpp"
#include "fsloc/metrics.hpp"
#include "fsloc/model.hpp"
#include "fsloc/reference.hpp"

namespace fsloc::verify {

struct SuiteResult {
    std::string name;
    bool pass = true;
    double max_err = 0.0;
    long long cases = 0;
    std::string detail;

    void fail(const std::string& why) {
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    }

    void observe(double err, double tolerance, const std::string& label) {
        max_err = std::max(max_err, err);
        ++cases;
        if (!(err <= tolerance)) fail(detail::msg(label, " err=", err, " > ", tolerance));
    }
};

using D = double;
using DTensor = Tensor<D>;

namespace detail_v {

inline DTensor randn(Rng& rng, Shape shape, bool rg = false) {
    return DTensor::randn(std::move(shape), rng, 1.0, rg);
}

inline ConvSpec<D> random_conv_spec(Rng& rng, int ci, int co, int k, int stride, int pad,
                                    bool bias) {
    ConvSpec<D> spec;
    spec.weights = randn(rng, {co, ci, k, k});
    spec.stride = stride;
    spec.padding = pad;
    if (bias) spec.bias = randn(rng, {co});
    return spec;
}

inline DeformField<D> random_field(Rng& rng, int n, int oh, int ow, double span) {
    DeformField<D> field;
    field.offsets = DTensor::zeros({1, 2 * n, oh, ow});
    field.masks = DTensor::zeros({1, n, oh, ow});
    for (long long i = 0; i < field.offsets.numel(); ++i)
        field.offsets.data_mut()[i] = rng.uniform(-span, span);
    for (long long i = 0; i < field.masks.numel(); ++i)
        field.masks.data_mut()[i] = rng.uniform(0.0, 1.0);
    return field;
}

// keep fractional parts away from the bilinear kinks at integer positions
inline void de_kink(DTensor& offsets, Rng& rng) {
    for (long long i = 0; i < offsets.numel(); ++i) {
        double v = offsets.data_mut()[i];
        const double frac = v - std::floor(v);
        if (frac < 0.1) v += 0.1 + rng.uniform(0.0, 0.1);
        if (frac > 0.9) v -= 0.1 + rng.uniform(0.0, 0.1);
        offsets.data_mut()[i] = v;
    }
}

// Dense 3x3 spec equivalent to a cross spec with zeroed corners.
inline ConvSpec<D> cross_as_conv(const CcdcSpec<D>& spec) {
    const int co = spec.out_channels(), ci = spec.in_channels();
    ConvSpec<D> out;
    out.weights = DTensor::zeros({co, ci, 3, 3});
    out.stride = 1;
    out.padding = 1;
    for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i)
            for (int k = 0; k < 5; ++k) {
                const int ky = kCrossTaps[static_cast<std::size_t>(k)].first + 1;
                const int kx = kCrossTaps[static_cast<std::size_t>(k)].second + 1;
                out.weights.data_mut()[out.weights.index4(o, i, ky, kx)] =
                    spec.weights.data()[(static_cast<long long>(o) * ci + i) * 5 + k];
            }
    return out;
}

// Analytic grads via tape, numeric grads via central differences, for every
// requires-grad input of a scalar-producing forward function.
inline double fd_check(const std::function<DTensor(GradTape<D>*)>& forward,
                       const std::vector<DTensor>& inputs, Rng& rng, int coords_per_input = 8) {
    GradTape<D> tape;
    DTensor loss = forward(&tape);
    backward(loss, tape);
    const auto numeric_loss = [&forward] { return forward(nullptr).data()[0]; };
    double worst = 0.0;
    for (const auto& input : inputs) {
        if (!input.requires_grad()) continue;
        std::vector<long long> coords;
        if (input.numel() <= coords_per_input) {
            for (long long i = 0; i < input.numel(); ++i) coords.push_back(i);
        } else {
            std::set<long long> chosen;
            while (static_cast<int>(chosen.size()) < coords_per_input)
                chosen.insert(rng.uniform_int(0, static_cast<int>(input.numel()) - 1));
            coords.assign(chosen.begin(), chosen.end());
        }
        const auto report = reference::finite_diff_check<D>(input, coords, numeric_loss,
                                                            input.grad());
        worst = std::max(worst, report.max_rel_err);
    }
    return worst;
}

// scalar projection loss: sum(y * fixed_randoms)
inline std::function<DTensor(GradTape<D>*)> project(
    const std::function<DTensor(GradTape<D>*)>& op, const DTensor& proj) {
    return [op, proj](GradTape<D>* tape) { return sum(mul(op(tape), proj, tape), tape); };
}

inline PointList random_points(Rng& rng, int n, double lo, double hi) {
    PointList pts;
    for (int i = 0; i < n; ++i) pts.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
    return pts;
}

// Integer points with pairwise separation and border margin constraints.
inline PointList random_separated_points(Rng& rng, int h, int w, int count, double min_sep,
                                         int margin) {
    PointList pts;
    int tries = 0;
    while (static_cast<int>(pts.size()) < count && tries < 10000) {
        ++tries;
        Point p{static_cast<double>(rng.uniform_int(margin, w - 1 - margin)),
                static_cast<double>(rng.uniform_int(margin, h - 1 - margin))};
        bool ok = true;
        for (const auto& q : pts)
            if (point_distance(p, q) < min_sep) ok = false;
        if (ok) pts.push_back(p);
    }
    return pts;
}

}  // namespace detail_v

// ---------------------------------------------------------------------------
// 1. Oracle equivalence for the five kernels
// ---------------------------------------------------------------------------

inline SuiteResult conv_oracle_suite(std::uint64_t seed, int trials_per_op = 200) {
    SuiteResult result{"conv_oracles"};
    Rng rng(seed);
    const double tol = 1e-6;
    for (int t = 0; t < trials_per_op; ++t) {
        const int ci = rng.uniform_int(1, 4), co = rng.uniform_int(1, 4);
        const int h = rng.uniform_int(3, 8), w = rng.uniform_int(3, 8);
        const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 2);
        const auto x = detail_v::randn(rng, {1, ci, h, w});

        auto spec = detail_v::random_conv_spec(rng, ci, co, 3, stride, pad, t % 2 == 0);
        result.observe(reference::max_abs_diff(conv2d(x, spec), reference::conv2d(x, spec)),
                       tol, "conv2d");

        const int oh = spec.out_extent(h), ow = spec.out_extent(w);
        const auto field = detail_v::random_field(rng, 9, oh, ow, 2.0);
        result.observe(reference::max_abs_diff(deform_conv2d(x, spec, field),
                                               reference::deform_conv2d(x, spec, field)),
                       tol, "deform_conv2d");

        CcdcSpec<D> ccdc;
        ccdc.weights = detail_v::randn(rng, {co, ci, 5});
        ccdc.theta = rng.uniform(0.0, 1.0);
        result.observe(reference::max_abs_diff(ccdc_hv(x, ccdc), reference::ccdc_hv(x, ccdc)),
                       tol, "ccdc_hv");

        const auto kern = detail_v::randn(rng, {1, ci, 3, 3});
        result.observe(reference::max_abs_diff(corr2d_depthwise(x, kern),
                                               reference::corr2d_depthwise(x, kern)),
                       tol, "corr2d_depthwise");

        DualStack<D> stack(x, detail_v::randn(rng, {1, ci, h, w}), kern,
                           detail_v::randn(rng, {1, ci, 3, 3}));
        result.observe(reference::max_abs_diff(conv3d_dual(stack),
                                               reference::conv3d_dual(stack)),
                       tol, "conv3d_dual");
    }
    return result;
}

// ---------------------------------------------------------------------------
// 2. Degenerate reductions (exact up to float associativity)
// ---------------------------------------------------------------------------

inline SuiteResult degenerate_reduction_suite(std::uint64_t seed, int trials = 50) {
    SuiteResult result{"degenerate_reductions"};
    Rng rng(seed);
    const double tol = 1e-12;
    for (int t = 0; t < trials; ++t) {
        const int ci = rng.uniform_int(1, 4), co = rng.uniform_int(1, 4);
        const int h = rng.uniform_int(3, 8), w = rng.uniform_int(3, 8);
        const auto x = detail_v::randn(rng, {1, ci, h, w});
        auto spec = detail_v::random_conv_spec(rng, ci, co, 3, 1, 1, false);

        // zero offsets + unit masks reduce the deformable op to the vanilla op
        DeformField<D> neutral;
        neutral.offsets = DTensor::zeros({1, 18, h, w});
        neutral.masks = DTensor::full({1, 9, h, w}, 1.0);
        result.observe(reference::max_abs_diff(deform_conv2d(x, spec, neutral),
                                               conv2d(x, spec)),
                       tol, "deform_identity");

        // theta = 0 leaves only the cross-shaped intensity convolution
        CcdcSpec<D> ccdc;
        ccdc.weights = detail_v::randn(rng, {co, ci, 5});
        ccdc.theta = 0.0;
        result.observe(reference::max_abs_diff(ccdc_hv(x, ccdc),
                                               conv2d(x, detail_v::cross_as_conv(ccdc))),
                       tol, "ccdc_theta0");

        // constant input with theta = 1: every central difference vanishes
        // wherever the cross stays inside the image (zero padding feeds the
        // border taps, so the identity is an interior one)
        ccdc.theta = 1.0;
        const auto constant = DTensor::full({1, ci, h, w}, rng.uniform(-2.0, 2.0));
        const auto zero_out = ccdc_hv(constant, ccdc);
        double worst = 0.0;
        for (int c = 0; c < co; ++c)
            for (int py = 1; py + 1 < h; ++py)
                for (int px = 1; px + 1 < w; ++px)
                    worst = std::max(worst, std::abs(zero_out(0, c, py, px)));
        result.observe(worst, tol, "ccdc_constant_theta1");

        // dual stack = sum of per-branch correlations; a zero branch drops out
        const auto qd = detail_v::randn(rng, {1, ci, h, w});
        const auto qg = detail_v::randn(rng, {1, ci, h, w});
        const auto kd = detail_v::randn(rng, {1, ci, 3, 3});
        const auto kg = detail_v::randn(rng, {1, ci, 3, 3});
        const auto dual = conv3d_dual(DualStack<D>(qd, qg, kd, kg));
        const auto branch_sum = add(corr2d_depthwise(qd, kd), corr2d_depthwise(qg, kg));
        result.observe(reference::max_abs_diff(dual, branch_sum), tol, "dual_branch_sum");

        const auto zero_q = DTensor::zeros({1, ci, h, w});
        const auto zero_k = DTensor::zeros({1, ci, 3, 3});
        const auto single = conv3d_dual(DualStack<D>(qd, zero_q, kd, zero_k));
        result.observe(reference::max_abs_diff(single, corr2d_depthwise(qd, kd)), tol,
                       "dual_zero_branch");

        // doubling one branch pair doubles nothing else: equal branches = 2x
        const auto both = conv3d_dual(DualStack<D>(qd, qd, kd, kd));
        const auto twice = scale(corr2d_depthwise(qd, kd), 2.0);
        result.observe(reference::max_abs_diff(both, twice), tol, "dual_equal_branches");
    }
    return result;
}

// ---------------------------------------------------------------------------
// 3. Linearity in the weight argument
// ---------------------------------------------------------------------------

inline SuiteResult weight_linearity_suite(std::uint64_t seed, int trials = 50) {
    SuiteResult result{"weight_linearity"};
    Rng rng(seed);
    const double tol = 1e-12;
    for (int t = 0; t < trials; ++t) {
        const int ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3);
        const int h = rng.uniform_int(3, 6), w = rng.uniform_int(3, 6);
        const double alpha = rng.uniform(-3.0, 3.0);
        const auto x = detail_v::randn(rng, {1, ci, h, w});

        auto spec = detail_v::random_conv_spec(rng, ci, co, 3, 1, 1, false);
        auto scaled = spec;
        scaled.weights = scale(spec.weights, alpha);
        result.observe(reference::max_abs_diff(conv2d(x, scaled),
                                               scale(conv2d(x, spec), alpha)),
                       tol, "conv2d_linearity");

        const auto field = detail_v::random_field(rng, 9, h, w, 1.5);
        result.observe(reference::max_abs_diff(deform_conv2d(x, scaled, field),
                                               scale(deform_conv2d(x, spec, field), alpha)),
                       tol, "deform_linearity");

        CcdcSpec<D> ccdc;
        ccdc.weights = detail_v::randn(rng, {co, ci, 5});
        ccdc.theta = rng.uniform(0.0, 1.0);
        CcdcSpec<D> ccdc_scaled = ccdc;
        ccdc_scaled.weights =
            DTensor({co, ci, 5}, [&] {
                std::vector<D> v(ccdc.weights.values());
                for (auto& e : v) e *= alpha;
                return v;
            }());
        result.observe(reference::max_abs_diff(ccdc_hv(x, ccdc_scaled),
                                               scale(ccdc_hv(x, ccdc), alpha)),
                       tol, "ccdc_linearity");

        const auto kern = detail_v::randn(rng, {1, ci, 3, 3});
        result.observe(reference::max_abs_diff(corr2d_depthwise(x, scale(kern, alpha)),
                                               scale(corr2d_depthwise(x, kern), alpha)),
                       tol, "corr_linearity");
    }
    return result;
}

// ---------------------------------------------------------------------------
// 4. Gradient checks: elementwise/resampling ops
// ---------------------------------------------------------------------------

inline SuiteResult tensor_grad_suite(std::uint64_t seed, int cases_per_op = 20) {
    SuiteResult result{"tensor_gradients"};
    Rng rng(seed);
    const double tol = 1e-4;
    for (int t = 0; t < cases_per_op; ++t) {
        const int c = rng.uniform_int(1, 3), h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
        const Shape shape{1, c, h, w};

        {
            auto a = detail_v::randn(rng, shape, true);
            auto b = detail_v::randn(rng, shape, true);
            auto proj = detail_v::randn(rng, shape);
            auto fn = detail_v::project(
                [a, b](GradTape<D>* tape) { return add(a, b, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {a, b}, rng), tol, "add");
        }
        {
            auto a = detail_v::randn(rng, shape, true);
            auto b = detail_v::randn(rng, {1, 1, h, w}, true);  // channel broadcast
            auto proj = detail_v::randn(rng, shape);
            auto fn = detail_v::project(
                [a, b](GradTape<D>* tape) { return add(a, b, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {a, b}, rng), tol, "add_broadcast");
        }
        {
            auto a = detail_v::randn(rng, shape, true);
            auto b = detail_v::randn(rng, shape, true);
            auto proj = detail_v::randn(rng, shape);
            auto fn = detail_v::project(
                [a, b](GradTape<D>* tape) { return mul(a, b, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {a, b}, rng), tol, "mul");
        }
        {
            auto a = detail_v::randn(rng, shape, true);
            auto b = detail_v::randn(rng, {1, 1, h, w}, true);
            auto proj = detail_v::randn(rng, shape);
            auto fn = detail_v::project(
                [a, b](GradTape<D>* tape) { return mul(a, b, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {a, b}, rng), tol, "mul_broadcast");
        }
        {
            // keep values away from the relu kink
            auto x = detail_v::randn(rng, shape, true);
            for (long long i = 0; i < x.numel(); ++i)
                if (std::abs(x.data()[i]) < 0.05)
                    x.data_mut()[i] += x.data()[i] >= 0 ? 0.1 : -0.1;
            auto proj = detail_v::randn(rng, shape);
            auto fn = detail_v::project(
                [x](GradTape<D>* tape) { return leaky_relu(x, 0.01, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {x}, rng), tol, "leaky_relu");
        }
        {
            auto x = detail_v::randn(rng, shape, true);
            auto proj = detail_v::randn(rng, shape);
            auto fn = detail_v::project(
                [x](GradTape<D>* tape) { return sigmoid(x, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {x}, rng), tol, "sigmoid");
        }
        {
            auto x = detail_v::randn(rng, {1, c, rng.uniform_int(3, 7), rng.uniform_int(3, 7)},
                                     true);
            auto proj = detail_v::randn(rng, {1, c, 3, 3});
            auto fn = detail_v::project(
                [x](GradTape<D>* tape) { return adaptive_avg_pool(x, 3, 3, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {x}, rng), tol, "adaptive_avg_pool");
        }
        {
            auto x = detail_v::randn(rng, {1, c, h, w}, true);
            auto proj = detail_v::randn(rng, {1, c, h * 2, w * 2});
            auto fn = detail_v::project(
                [x, h, w](GradTape<D>* tape) {
                    return bilinear_upsample(x, h * 2, w * 2, tape);
                },
                proj);
            result.observe(detail_v::fd_check(fn, {x}, rng), tol, "bilinear_upsample");
        }
        {
            auto a = detail_v::randn(rng, shape, true);
            auto b = detail_v::randn(rng, shape, true);
            auto fn = [a, b](GradTape<D>* tape) { return mse_loss(a, b, tape); };
            result.observe(detail_v::fd_check(fn, {a, b}, rng), tol, "mse_loss");
        }
        {
            auto a = detail_v::randn(rng, shape, true);
            auto b = detail_v::randn(rng, shape, true);
            auto proj = detail_v::randn(rng, {1, 1, h, w});
            auto fn = detail_v::project(
                [a, b](GradTape<D>* tape) { return channel_cosine(a, b, 1e-12, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {a, b}, rng), tol, "channel_cosine");
        }
        {
            auto a = detail_v::randn(rng, shape, true);
            auto b = detail_v::randn(rng, {1, 2, h, w}, true);
            auto proj = detail_v::randn(rng, {1, c + 2, h, w});
            auto fn = detail_v::project(
                [a, b](GradTape<D>* tape) {
                    return concat_channels<D>({a, b}, tape);
                },
                proj);
            result.observe(detail_v::fd_check(fn, {a, b}, rng), tol, "concat_channels");
        }
        {
            auto x = detail_v::randn(rng, {1, 3, h, w}, true);
            auto proj = detail_v::randn(rng, {1, 2, h, w});
            auto fn = detail_v::project(
                [x](GradTape<D>* tape) { return slice_channels(x, 1, 3, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {x}, rng), tol, "slice_channels");
        }
        {
            auto x = detail_v::randn(rng, {1, c, 5, 5}, true);
            auto proj = detail_v::randn(rng, {1, c, 3, 2});
            auto fn = detail_v::project(
                [x](GradTape<D>* tape) { return crop_spatial(x, 1, 4, 2, 4, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {x}, rng), tol, "crop_spatial");
        }
        {
            auto x = detail_v::randn(rng, shape, true);
            auto fn = [x](GradTape<D>* tape) { return sum(x, tape); };
            result.observe(detail_v::fd_check(fn, {x}, rng), tol, "sum");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// 5. Gradient checks: convolution kernels
// ---------------------------------------------------------------------------

inline SuiteResult conv_grad_suite(std::uint64_t seed, int cases_per_op = 20) {
    SuiteResult result{"conv_gradients"};
    Rng rng(seed);
    const double tol = 1e-4;
    for (int t = 0; t < cases_per_op; ++t) {
        const int ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3);
        const int h = rng.uniform_int(4, 6), w = rng.uniform_int(4, 6);
        {
            auto x = detail_v::randn(rng, {1, ci, h, w}, true);
            auto spec = detail_v::random_conv_spec(rng, ci, co, 3, 1, 1, true);
            spec.weights.set_requires_grad(true);
            spec.bias.set_requires_grad(true);
            auto proj = detail_v::randn(rng, {1, co, h, w});
            auto fn = detail_v::project(
                [x, spec](GradTape<D>* tape) { return conv2d(x, spec, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {x, spec.weights, spec.bias}, rng), tol,
                           "conv2d_grad");
        }
        {
            auto x = detail_v::randn(rng, {1, ci, h, w}, true);
            auto spec = detail_v::random_conv_spec(rng, ci, co, 3, 1, 1, false);
            spec.weights.set_requires_grad(true);
            auto field = detail_v::random_field(rng, 9, h, w, 1.3);
            detail_v::de_kink(field.offsets, rng);
            field.offsets.set_requires_grad(true);
            field.masks.set_requires_grad(true);
            auto proj = detail_v::randn(rng, {1, co, h, w});
            auto fn = detail_v::project(
                [x, spec, field](GradTape<D>* tape) {
                    return deform_conv2d(x, spec, field, tape);
                },
                proj);
            result.observe(
                detail_v::fd_check(fn, {x, spec.weights, field.offsets, field.masks}, rng),
                tol, "deform_conv2d_grad");
        }
        {
            auto x = detail_v::randn(rng, {1, ci, h, w}, true);
            CcdcSpec<D> ccdc;
            ccdc.weights = detail_v::randn(rng, {co, ci, 5}, true);
            ccdc.theta = 0.5;
            auto proj = detail_v::randn(rng, {1, co, h, w});
            auto fn = detail_v::project(
                [x, ccdc](GradTape<D>* tape) { return ccdc_hv(x, ccdc, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {x, ccdc.weights}, rng), tol, "ccdc_grad");
        }
        {
            auto q = detail_v::randn(rng, {1, ci, h, w}, true);
            auto k = detail_v::randn(rng, {1, ci, 3, 3}, true);
            auto proj = detail_v::randn(rng, {1, ci, h, w});
            auto fn = detail_v::project(
                [q, k](GradTape<D>* tape) { return corr2d_depthwise(q, k, tape); }, proj);
            result.observe(detail_v::fd_check(fn, {q, k}, rng), tol, "corr_grad");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// 6. End-to-end pipeline gradient
// ---------------------------------------------------------------------------

inline ModelConfig tiny_pipeline_config() {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.channels = 8;
    cfg.stage_widths = {4, 6, 8};
    cfg.head_widths = {6, 4};
    return cfg;
}

inline SuiteResult pipeline_grad_suite(std::uint64_t seed, int coords_per_group = 5,
                                       const ModelConfig& cfg = tiny_pipeline_config()) {
    SuiteResult result{"pipeline_gradient"};
    Rng rng(seed);
    const double tol = 1e-4;

    Model<D> model(cfg);
    model.init(seed);
    // The zero-offset init parks every deformable sample on the integer
    // lattice, where bilinear interpolation has a kink and central
    // differences disagree with the one-sided derivative. Nudge the offset
    // generator to probe the gradient at a generic point.
    for (auto& p : model.parameters()) {
        if (p.name == "dfa.dc_offset.weight")
            for (long long i = 0; i < p.tensor.numel(); ++i)
                p.tensor.data_mut()[i] = rng.normal(0.0, 0.02);
        if (p.name == "dfa.dc_offset.bias")
            for (long long i = 0; i < p.tensor.numel(); ++i)
                p.tensor.data_mut()[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) *
                                         rng.uniform(0.2, 0.45);
    }

    const int R = cfg.image_size;
    auto image = detail_v::randn(rng, {1, 3, R, R});
    for (long long i = 0; i < image.numel(); ++i)
        image.data_mut()[i] = rng.uniform(0.0, 1.0);
    const Box box{R * 0.25, R * 0.25, R * 0.65, R * 0.65};
    auto target = detail_v::randn(rng, {1, 1, R, R});

    auto fn = [&model, image, box, target](GradTape<D>* tape) {
        const auto features = model.forward(image, box, tape);
        return mse_loss(features.prediction, target, tape);
    };

    // one representative tensor per stage of the pipeline
    const std::vector<std::string> groups = {"backbone.stem1.weight", "backbone.proj.weight",
                                             "dfa.dc.weight", "dfa.dc_offset.weight",
                                             "dfa.ccdc.weight", "sq.in.weight",
                                             "sq.out.weight", "head.block0.weight",
                                             "head.final.weight"};
    GradTape<D> tape;
    DTensor loss = fn(&tape);
    backward(loss, tape);
    const auto numeric_loss = [&fn] { return fn(nullptr).data()[0]; };

    long long probed = 0;
    for (const auto& p : model.parameters()) {
        bool wanted = false;
        for (const auto& g : groups) wanted = wanted || p.name == g;
        if (!wanted) continue;
        std::set<long long> chosen;
        while (static_cast<int>(chosen.size()) <
               std::min<long long>(coords_per_group, p.tensor.numel()))
            chosen.insert(rng.uniform_int(0, static_cast<int>(p.tensor.numel()) - 1));
        const std::vector<long long> coords(chosen.begin(), chosen.end());
        const auto report =
            reference::finite_diff_check<D>(p.tensor, coords, numeric_loss, p.tensor.grad());
        probed += report.checked;
        result.observe(report.max_rel_err, tol, p.name);
    }
    if (probed < 20) result.fail(detail::msg("only ", probed, " parameters probed"));
    model.zero_grad();
    return result;
}

// ---------------------------------------------------------------------------
// 7. Self-query properties
// ---------------------------------------------------------------------------

inline SuiteResult self_query_suite(std::uint64_t seed, int fuzz = 1000) {
    SuiteResult result{"self_query"};
    Rng rng(seed);
    const int C = 8, H = 6, W = 6;

    // W stays within [-1, 1] on random inputs through a random bias-free conv
    for (int t = 0; t < fuzz; ++t) {
        ConvSpec<D> in_conv;
        in_conv.weights = detail_v::randn(rng, {C, C, 1, 1});
        const auto s = detail_v::randn(rng, {1, C, H, W});
        const auto q = detail_v::randn(rng, {1, C, H, W});
        const auto weights = channel_cosine(conv2d(s, in_conv), conv2d(q, in_conv));
        double bound_err = 0.0;
        for (long long i = 0; i < weights.numel(); ++i)
            bound_err = std::max(bound_err, std::abs(weights.data()[i]) - 1.0);
        result.observe(std::max(0.0, bound_err), 0.0, "w_bounds");
    }

    // positive-scale invariance of W under S -> alpha * S (bias-free In_conv)
    for (int t = 0; t < 50; ++t) {
        ConvSpec<D> in_conv;
        in_conv.weights = detail_v::randn(rng, {C, C, 1, 1});
        const auto s = detail_v::randn(rng, {1, C, H, W});
        const auto q = detail_v::randn(rng, {1, C, H, W});
        const double alpha = t == 0 ? 7.3 : rng.uniform(0.1, 20.0);
        const auto w1 = channel_cosine(conv2d(s, in_conv), conv2d(q, in_conv));
        const auto w2 = channel_cosine(conv2d(scale(s, alpha), in_conv), conv2d(q, in_conv));
        result.observe(reference::max_abs_diff(w1, w2), 1e-12, "scale_invariance");

        // negating one argument negates the cosine exactly
        const auto w3 = channel_cosine(conv2d(scale(s, -1.0), in_conv), conv2d(q, in_conv));
        double neg_err = 0.0;
        for (long long i = 0; i < w1.numel(); ++i)
            neg_err = std::max(neg_err, std::abs(w1.data()[i] + w3.data()[i]));
        result.observe(neg_err, 1e-12, "negation_antisymmetry");
    }

    // identity In_conv and S == F_Q: W is exactly one everywhere
    {
        ConvSpec<D> identity;
        identity.weights = DTensor::zeros({C, C, 1, 1});
        for (int c = 0; c < C; ++c)
            identity.weights.data_mut()[identity.weights.index4(c, c, 0, 0)] = 1.0;
        const auto q = detail_v::randn(rng, {1, C, H, W});
        const auto w = channel_cosine(conv2d(q, identity), conv2d(q, identity));
        double err = 0.0;
        for (long long i = 0; i < w.numel(); ++i)
            err = std::max(err, std::abs(w.data()[i] - 1.0));
        result.observe(err, 1e-12, "self_similarity");
    }

    // zero-vector columns hit the epsilon guard, never a crash or NaN
    {
        const auto zeros = DTensor::zeros({1, C, H, W});
        const auto q = detail_v::randn(rng, {1, C, H, W});
        const auto w = channel_cosine(zeros, q);
        double err = 0.0;
        for (long long i = 0; i < w.numel(); ++i) {
            if (!std::isfinite(w.data()[i])) err = 1.0;
            err = std::max(err, std::abs(w.data()[i]));
        }
        result.observe(err, 1e-12, "zero_column_guard");
    }
    return result;
}

// ---------------------------------------------------------------------------
// 8. Location-map roundtrip
// ---------------------------------------------------------------------------

inline SuiteResult locmap_roundtrip_suite(std::uint64_t seed, int trials = 100) {
    SuiteResult result{"locmap_roundtrip"};
    Rng rng(seed);
    const std::vector<DecoderConfig> presets = {DecoderConfig{}, DecoderConfig::dense(),
                                                DecoderConfig::sparse()};
    for (int t = 0; t < trials; ++t) {
        const int count = rng.uniform_int(0, 10);
        const auto pts = detail_v::random_separated_points(rng, 64, 64, count, 5.0, 3);
        const auto map = encode_location_map<double>(pts, 64, 64);
        const auto& preset = presets[static_cast<std::size_t>(t) % presets.size()];
        const auto decoded = decode_peaks(map, preset);
        std::set<std::pair<int, int>> want, got;
        for (const auto& p : pts) want.insert({static_cast<int>(p.x), static_cast<int>(p.y)});
        for (const auto& p : decoded) got.insert({static_cast<int>(p.x), static_cast<int>(p.y)});
        result.observe(want == got ? 0.0 : 1.0, 0.0, "roundtrip");

        // distance transform against the direct nearest-point scan
        if (!pts.empty() && t % 10 == 0) {
            double edt_err = 0.0;
            for (int probe = 0; probe < 20; ++probe) {
                const int px = rng.uniform_int(0, 63), py = rng.uniform_int(0, 63);
                const double d = reference::brute_force_nearest(pts, px, py);
                const double v = 1.0 / (std::pow(d, 0.02 * d + 0.75) + 1.0);
                edt_err = std::max(edt_err, std::abs(v - static_cast<double>(map.at(py, px))));
            }
            result.observe(edt_err, 1e-9, "edt_oracle");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// 9. Matching against brute force
// ---------------------------------------------------------------------------

inline SuiteResult matching_oracle_suite(std::uint64_t seed, int trials = 500) {
    SuiteResult result{"matching_oracle"};
    Rng rng(seed);
    for (int t = 0; t < trials; ++t) {
        const int np = rng.uniform_int(0, 6), ng = rng.uniform_int(0, 6);
        const auto pred = detail_v::random_points(rng, np, 0.0, 20.0);
        const auto gt = detail_v::random_points(rng, ng, 0.0, 20.0);
        const double sigma = rng.uniform(1.0, 12.0);
        const auto fast = match_points(pred, gt, sigma);
        const auto brute = reference::brute_force_match(pred, gt, sigma);
        result.observe(fast.tp == brute.tp ? 0.0 : 1.0, 0.0, "tp_equality");
        if (fast.tp == brute.tp && fast.tp > 0)
            result.observe(std::abs(fast.total_distance() - brute.total_distance), 1e-9,
                           "distance_optimality");

        // symmetric gating: swapping the point sets mirrors FP/FN
        const auto mirrored = match_points(gt, pred, sigma);
        const bool symmetric = mirrored.tp == fast.tp && mirrored.fp == fast.fn &&
                               mirrored.fn == fast.fp;
        result.observe(symmetric ? 0.0 : 1.0, 0.0, "symmetry");

        // TP is nondecreasing in sigma
        const auto wider = match_points(pred, gt, sigma * 1.5);
        result.observe(wider.tp >= fast.tp ? 0.0 : 1.0, 0.0, "sigma_monotonicity");
    }

    // the 3-4-5 spot value
    const PointList pred{{3.0, 4.0}}, gt{{0.0, 0.0}};
    const auto tight = match_points(pred, gt, 4.0);
    const auto loose = match_points(pred, gt, 10.0);
    result.observe((tight.tp == 0 && tight.fp == 1 && tight.fn == 1) ? 0.0 : 1.0, 0.0,
                   "triangle_345_tight");
    result.observe((loose.tp == 1 && loose.fp == 0 && loose.fn == 0) ? 0.0 : 1.0, 0.0,
                   "triangle_345_loose");
    result.observe(std::abs(point_distance(pred[0], gt[0]) - 5.0), 1e-12, "triangle_345_dist");
    return result;
}

// ---------------------------------------------------------------------------
// 10. Metric formulas
// ---------------------------------------------------------------------------

inline SuiteResult metric_formula_suite(std::uint64_t seed, int fuzz = 1000) {
    SuiteResult result{"metric_formulas"};
    Rng rng(seed);

    struct Fixture {
        int tp, fp, fn;
        double p, r, f1;
    };
    const double p59 = 59.0 / 100.0, r59 = 59.0 / 89.0;
    const std::vector<Fixture> fixtures = {
        {0, 0, 0, 0.0, 0.0, 0.0},
        {1, 1, 0, 0.5, 1.0, 2.0 / 3.0},
        {59, 41, 30, p59, r59, 2.0 * p59 * r59 / (p59 + r59)},
        {5, 0, 0, 1.0, 1.0, 1.0},
        {0, 3, 4, 0.0, 0.0, 0.0},
    };
    for (const auto& f : fixtures) {
        const auto rates = prf1(f.tp, f.fp, f.fn);
        result.observe(std::abs(rates.precision - f.p), 1e-12, "precision_fixture");
        result.observe(std::abs(rates.recall - f.r), 1e-12, "recall_fixture");
        result.observe(std::abs(rates.f1 - f.f1), 1e-12, "f1_fixture");
    }

    {
        const auto e = counting_errors({3, 2}, {2, 4});
        result.observe(std::abs(e.mae - 1.5), 1e-12, "mae_fixture");
        result.observe(std::abs(e.rmse - std::sqrt(2.5)), 1e-12, "rmse_fixture");
        const auto exact = counting_errors({4, 7, 9}, {4, 7, 9});
        result.observe(std::abs(exact.mae) + std::abs(exact.rmse), 1e-12, "exact_fixture");
    }

    for (int t = 0; t < fuzz; ++t) {
        const int n = rng.uniform_int(1, 12);
        std::vector<int> y(static_cast<std::size_t>(n)), yhat(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i)] = rng.uniform_int(0, 40);
            yhat[static_cast<std::size_t>(i)] = rng.uniform_int(0, 40);
        }
        const auto e = counting_errors(y, yhat);
        result.observe(e.rmse + 1e-12 >= e.mae ? 0.0 : 1.0, 0.0, "rmse_ge_mae");

        const int tp = rng.uniform_int(0, 30), fp = rng.uniform_int(0, 30),
                  fn = rng.uniform_int(0, 30);
        const auto rates = prf1(tp, fp, fn);
        const bool in_range = rates.precision >= 0 && rates.precision <= 1 &&
                              rates.recall >= 0 && rates.recall <= 1 && rates.f1 >= 0 &&
                              rates.f1 <= 1;
        result.observe(in_range ? 0.0 : 1.0, 0.0, "rates_in_range");
        if (rates.precision + rates.recall > 0)
            result.observe(std::abs(rates.f1 - 2 * rates.precision * rates.recall /
                                                   (rates.precision + rates.recall)),
                           1e-12, "f1_harmonic");
    }
    return result;
}

// ---------------------------------------------------------------------------
// 11. Broadcast gradients against the explicit expansion
// ---------------------------------------------------------------------------

inline SuiteResult broadcast_grad_suite(std::uint64_t seed, int trials = 40) {
    SuiteResult result{"broadcast_gradients"};
    Rng rng(seed);
    for (int t = 0; t < trials; ++t) {
        const int c = rng.uniform_int(2, 5), h = rng.uniform_int(2, 5), w = rng.uniform_int(2, 5);
        auto a = detail_v::randn(rng, {1, c, h, w});
        auto b = detail_v::randn(rng, {1, 1, h, w}, true);
        auto proj = detail_v::randn(rng, {1, c, h, w});

        GradTape<D> tape;
        auto loss = sum(mul(add(a, b, &tape), proj, &tape), &tape);
        backward(loss, tape);

        // expansion oracle: replicate b across channels, sum the expanded grads
        double err = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double want = 0.0;
                for (int ci = 0; ci < c; ++ci) want += proj.data()[proj.index4(0, ci, y, x)];
                const double got = b.grad()[static_cast<std::size_t>(b.index4(0, 0, y, x))];
                err = std::max(err, std::abs(want - got));
            }
        result.observe(err, 1e-12, "broadcast_sum");
    }
    return result;
}

inline std::vector<SuiteResult> run_all(std::uint64_t seed) {
    return {
        conv_oracle_suite(seed),      degenerate_reduction_suite(seed),
        weight_linearity_suite(seed), tensor_grad_suite(seed),
        conv_grad_suite(seed),        pipeline_grad_suite(seed),
        self_query_suite(seed),       locmap_roundtrip_suite(seed),
        matching_oracle_suite(seed),  metric_formula_suite(seed),
        broadcast_grad_suite(seed),
    };
}

}  // namespace fsloc::verify
