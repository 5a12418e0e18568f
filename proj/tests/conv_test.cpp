#include <gtest/gtest.h>

#include "fsloc/conv.hpp"
#include "fsloc/reference.hpp"
#include "fsloc/verify.hpp"

using fsloc::CcdcSpec;
using fsloc::ConvSpec;
using fsloc::DeformField;
using fsloc::DualStack;
using fsloc::Rng;
using fsloc::Tensor;

namespace {

ConvSpec<double> ones_kernel(int ci, int co, int pad) {
    ConvSpec<double> spec;
    spec.weights = Tensor<double>::full({co, ci, 3, 3}, 1.0);
    spec.padding = pad;
    return spec;
}

}  // namespace

TEST(Conv2dTest, SumOfOnes) {
    auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto y = fsloc::conv2d(x, ones_kernel(1, 1, 0));
    ASSERT_EQ(y.shape(), (fsloc::Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.data()[0], 9.0);
}

TEST(Conv2dTest, DeltaKernelIsIdentity) {
    Rng rng(2);
    auto x = Tensor<double>::randn({1, 2, 5, 6}, rng);
    ConvSpec<double> spec;
    spec.weights = Tensor<double>::zeros({2, 2, 3, 3});
    for (int c = 0; c < 2; ++c)
        spec.weights.data_mut()[spec.weights.index4(c, c, 1, 1)] = 1.0;
    spec.padding = 1;
    auto y = fsloc::conv2d(x, spec);
    for (long long i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2dTest, RandomCaseMatchesBruteForce) {
    Rng rng(3);
    auto x = Tensor<double>::randn({1, 4, 6, 6}, rng);
    ConvSpec<double> spec;
    spec.weights = Tensor<double>::randn({2, 4, 3, 3}, rng);
    spec.bias = Tensor<double>::randn({2}, rng);
    spec.padding = 1;
    EXPECT_LE(fsloc::reference::max_abs_diff(fsloc::conv2d(x, spec),
                                             fsloc::reference::conv2d(x, spec)),
              1e-12);
}

TEST(Conv2dTest, ErrorPaths) {
    auto x = Tensor<double>::zeros({1, 2, 4, 4});
    EXPECT_THROW(fsloc::conv2d(x, ones_kernel(3, 1, 1)), fsloc::ShapeError);
    // 3x3 kernel on a 2x2 input without padding leaves no output extent
    auto tiny = Tensor<double>::zeros({1, 1, 2, 2});
    EXPECT_THROW(fsloc::conv2d(tiny, ones_kernel(1, 1, 0)), fsloc::ShapeError);
}

TEST(DeformConvTest, NeutralFieldReducesToVanilla) {
    Rng rng(5);
    auto x = Tensor<double>::randn({1, 3, 6, 6}, rng);
    ConvSpec<double> spec;
    spec.weights = Tensor<double>::randn({2, 3, 3, 3}, rng);
    spec.padding = 1;
    DeformField<double> field;
    field.offsets = Tensor<double>::zeros({1, 18, 6, 6});
    field.masks = Tensor<double>::full({1, 9, 6, 6}, 1.0);
    EXPECT_LE(fsloc::reference::max_abs_diff(fsloc::deform_conv2d(x, spec, field),
                                             fsloc::conv2d(x, spec)),
              1e-12);
}

TEST(DeformConvTest, IntegerShiftEqualsShiftedConvOnInterior) {
    Rng rng(6);
    const int H = 7, W = 7;
    auto x = Tensor<double>::randn({1, 2, H, W}, rng);
    ConvSpec<double> spec;
    spec.weights = Tensor<double>::randn({2, 2, 3, 3}, rng);
    spec.padding = 1;

    DeformField<double> field;
    field.offsets = Tensor<double>::zeros({1, 18, H, W});
    field.masks = Tensor<double>::full({1, 9, H, W}, 1.0);
    for (int k = 0; k < 9; ++k)  // (dy, dx) = (0, +1) at every tap and location
        for (int i = 0; i < H * W; ++i)
            field.offsets.data_mut()[(2 * k + 1) * H * W + i] = 1.0;
    auto deformed = fsloc::deform_conv2d(x, spec, field);

    // input shifted left by one column, zero-filled at the right edge
    auto shifted = Tensor<double>::zeros({1, 2, H, W});
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < H; ++y)
            for (int col = 0; col + 1 < W; ++col)
                shifted.data_mut()[shifted.index4(0, c, y, col)] = x(0, c, y, col + 1);
    auto conv_shifted = fsloc::conv2d(shifted, spec);

    for (int co = 0; co < 2; ++co)
        for (int oy = 1; oy + 1 < H; ++oy)
            for (int ox = 1; ox + 2 < W; ++ox)
                EXPECT_NEAR(deformed(0, co, oy, ox), conv_shifted(0, co, oy, ox), 1e-12);
}

TEST(DeformConvTest, HalfPixelShiftOnRampIsExact) {
    // bilinear sampling is exact on linear functions: x(i,j) = j shifted by
    // 0.5 adds exactly 0.5 at every tap
    const int H = 6, W = 8;
    std::vector<double> ramp(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) ramp[static_cast<std::size_t>(y) * W + x] = x;
    Tensor<double> x({1, 1, H, W}, ramp);

    Rng rng(7);
    ConvSpec<double> spec;
    spec.weights = Tensor<double>::randn({1, 1, 3, 3}, rng);
    spec.padding = 1;

    DeformField<double> field;
    field.offsets = Tensor<double>::zeros({1, 18, H, W});
    field.masks = Tensor<double>::full({1, 9, H, W}, 1.0);
    for (int k = 0; k < 9; ++k)
        for (int i = 0; i < H * W; ++i)
            field.offsets.data_mut()[(2 * k + 1) * H * W + i] = 0.5;
    auto deformed = fsloc::deform_conv2d(x, spec, field);
    auto vanilla = fsloc::conv2d(x, spec);

    double wsum = 0.0;
    for (long long i = 0; i < spec.weights.numel(); ++i) wsum += spec.weights.data()[i];
    for (int oy = 1; oy + 1 < H; ++oy)
        for (int ox = 1; ox + 2 < W; ++ox)
            EXPECT_NEAR(deformed(0, 0, oy, ox), vanilla(0, 0, oy, ox) + 0.5 * wsum, 1e-12);
}

TEST(DeformConvTest, RejectsBadFields) {
    auto x = Tensor<double>::zeros({1, 1, 4, 4});
    ConvSpec<double> spec = ones_kernel(1, 1, 1);
    DeformField<double> field;
    field.offsets = Tensor<double>::zeros({1, 18, 3, 3});  // wrong spatial extent
    field.masks = Tensor<double>::full({1, 9, 4, 4}, 1.0);
    EXPECT_THROW(fsloc::deform_conv2d(x, spec, field), fsloc::ShapeError);

    field.offsets = Tensor<double>::zeros({1, 18, 4, 4});
    field.offsets.data_mut()[3] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(fsloc::deform_conv2d(x, spec, field), fsloc::ValueError);
}

TEST(CcdcTest, ConstantInputWithFullThetaVanishes) {
    Rng rng(8);
    CcdcSpec<double> spec;
    spec.weights = Tensor<double>::randn({2, 3, 5}, rng);
    spec.theta = 1.0;
    auto x = Tensor<double>::full({1, 3, 5, 5}, 1.7);
    auto y = fsloc::ccdc_hv(x, spec);
    // interior only: at the borders the zero padding breaks constancy
    for (int co = 0; co < 2; ++co)
        for (int py = 1; py < 4; ++py)
            for (int px = 1; px < 4; ++px) EXPECT_NEAR(y(0, co, py, px), 0.0, 1e-12);
}

TEST(CcdcTest, ThetaZeroEqualsCrossConv) {
    Rng rng(9);
    CcdcSpec<double> spec;
    spec.weights = Tensor<double>::randn({3, 2, 5}, rng);
    spec.theta = 0.0;
    auto x = Tensor<double>::randn({1, 2, 6, 5}, rng);
    EXPECT_LE(fsloc::reference::max_abs_diff(
                  fsloc::ccdc_hv(x, spec),
                  fsloc::conv2d(x, fsloc::verify::detail_v::cross_as_conv(spec))),
              1e-12);
}

TEST(CcdcTest, RandomCaseMatchesBruteForce) {
    Rng rng(10);
    CcdcSpec<double> spec;
    spec.weights = Tensor<double>::randn({2, 2, 5}, rng);
    spec.theta = 0.5;
    auto x = Tensor<double>::randn({1, 2, 5, 5}, rng);
    EXPECT_LE(fsloc::reference::max_abs_diff(fsloc::ccdc_hv(x, spec),
                                             fsloc::reference::ccdc_hv(x, spec)),
              1e-12);
}

TEST(CcdcTest, RejectsBadTheta) {
    Rng rng(11);
    CcdcSpec<double> spec;
    spec.weights = Tensor<double>::randn({1, 1, 5}, rng);
    spec.theta = 1.5;
    auto x = Tensor<double>::zeros({1, 1, 4, 4});
    EXPECT_THROW(fsloc::ccdc_hv(x, spec), fsloc::ValueError);
    spec.theta = -0.1;
    EXPECT_THROW(fsloc::ccdc_hv(x, spec), fsloc::ValueError);
}

TEST(CorrTest, DeltaKernelIsIdentity) {
    Rng rng(12);
    auto q = Tensor<double>::randn({1, 3, 6, 6}, rng);
    auto kern = Tensor<double>::zeros({1, 3, 3, 3});
    for (int c = 0; c < 3; ++c) kern.data_mut()[kern.index4(0, c, 1, 1)] = 1.0;
    auto y = fsloc::corr2d_depthwise(q, kern);
    for (long long i = 0; i < q.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], q.data()[i]);
}

TEST(CorrTest, ZeroKernelAnnihilates) {
    Rng rng(13);
    auto q = Tensor<double>::randn({1, 2, 4, 4}, rng);
    auto y = fsloc::corr2d_depthwise(q, Tensor<double>::zeros({1, 2, 3, 3}));
    for (long long i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 0.0);
}

TEST(CorrTest, RandomCaseMatchesBruteForce) {
    Rng rng(14);
    auto q = Tensor<double>::randn({1, 3, 7, 5}, rng);
    auto kern = Tensor<double>::randn({1, 3, 3, 3}, rng);
    EXPECT_LE(fsloc::reference::max_abs_diff(fsloc::corr2d_depthwise(q, kern),
                                             fsloc::reference::corr2d_depthwise(q, kern)),
              1e-12);
    EXPECT_THROW(fsloc::corr2d_depthwise(q, Tensor<double>::zeros({1, 2, 3, 3})),
                 fsloc::ShapeError);
}

TEST(DualStackTest, ZeroBranchLeavesSingleCorrelation) {
    Rng rng(15);
    auto qd = Tensor<double>::randn({1, 4, 8, 8}, rng);
    auto kd = Tensor<double>::randn({1, 4, 3, 3}, rng);
    DualStack<double> stack(qd, Tensor<double>::zeros({1, 4, 8, 8}), kd,
                            Tensor<double>::zeros({1, 4, 3, 3}));
    EXPECT_LE(fsloc::reference::max_abs_diff(fsloc::conv3d_dual(stack),
                                             fsloc::corr2d_depthwise(qd, kd)),
              1e-12);
}

TEST(DualStackTest, EqualBranchesDouble) {
    Rng rng(16);
    auto q = Tensor<double>::randn({1, 4, 8, 8}, rng);
    auto k = Tensor<double>::randn({1, 4, 3, 3}, rng);
    DualStack<double> stack(q, q, k, k);
    EXPECT_LE(fsloc::reference::max_abs_diff(fsloc::conv3d_dual(stack),
                                             fsloc::scale(fsloc::corr2d_depthwise(q, k), 2.0)),
              1e-12);
}

TEST(DualStackTest, RandomCaseMatchesBranchSumOracle) {
    Rng rng(17);
    DualStack<double> stack(Tensor<double>::randn({1, 4, 8, 8}, rng),
                            Tensor<double>::randn({1, 4, 8, 8}, rng),
                            Tensor<double>::randn({1, 4, 3, 3}, rng),
                            Tensor<double>::randn({1, 4, 3, 3}, rng));
    EXPECT_LE(fsloc::reference::max_abs_diff(fsloc::conv3d_dual(stack),
                                             fsloc::reference::conv3d_dual(stack)),
              1e-12);
}

TEST(DualStackTest, RejectsMismatchedStacks) {
    auto q = Tensor<double>::zeros({1, 4, 8, 8});
    auto k = Tensor<double>::zeros({1, 4, 3, 3});
    EXPECT_THROW(DualStack<double>(q, Tensor<double>::zeros({1, 3, 8, 8}), k, k),
                 fsloc::ShapeError);
    EXPECT_THROW(DualStack<double>(q, q, k, Tensor<double>::zeros({1, 3, 3, 3})),
                 fsloc::ShapeError);
    EXPECT_THROW(DualStack<double>(q, q, Tensor<double>::zeros({1, 3, 3, 3}),
                                   Tensor<double>::zeros({1, 3, 3, 3})),
                 fsloc::ShapeError);
}

TEST(ConvSuiteTest, OracleEquivalence) {
    const auto result = fsloc::verify::conv_oracle_suite(100, 60);
    EXPECT_TRUE(result.pass) << result.detail;
    EXPECT_LE(result.max_err, 1e-6);
}

TEST(ConvSuiteTest, DegenerateReductions) {
    const auto result = fsloc::verify::degenerate_reduction_suite(101, 25);
    EXPECT_TRUE(result.pass) << result.detail;
    EXPECT_LE(result.max_err, 1e-12);
}

TEST(ConvSuiteTest, WeightLinearity) {
    const auto result = fsloc::verify::weight_linearity_suite(102, 25);
    EXPECT_TRUE(result.pass) << result.detail;
}

TEST(ConvSuiteTest, Gradients) {
    const auto result = fsloc::verify::conv_grad_suite(103, 8);
    EXPECT_TRUE(result.pass) << result.detail;
    EXPECT_LE(result.max_err, 1e-4);
}
