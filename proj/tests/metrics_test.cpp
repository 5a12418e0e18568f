#include <gtest/gtest.h>

#include "fsloc/metrics.hpp"
#include "fsloc/reference.hpp"
#include "fsloc/verify.hpp"

using fsloc::match_points;
using fsloc::PointList;

TEST(MatchTest, IdenticalSetsMatchPerfectly) {
    const PointList pts = {{1.0, 2.0}, {5.0, 5.0}, {9.0, 1.0}};
    const auto m = match_points(pts, pts, 4.0);
    EXPECT_EQ(m.tp, 3);
    EXPECT_EQ(m.fp, 0);
    EXPECT_EQ(m.fn, 0);
    for (double d : m.distances) EXPECT_DOUBLE_EQ(d, 0.0);
}

TEST(MatchTest, Triangle345) {
    const PointList pred = {{3.0, 4.0}}, gt = {{0.0, 0.0}};
    const auto tight = match_points(pred, gt, 4.0);
    EXPECT_EQ(tight.tp, 0);
    EXPECT_EQ(tight.fp, 1);
    EXPECT_EQ(tight.fn, 1);
    const auto loose = match_points(pred, gt, 10.0);
    EXPECT_EQ(loose.tp, 1);
    ASSERT_EQ(loose.distances.size(), 1u);
    EXPECT_DOUBLE_EQ(loose.distances[0], 5.0);
    // boundary: a distance exactly sigma still matches
    const auto exact = match_points(pred, gt, 5.0);
    EXPECT_EQ(exact.tp, 1);
}

TEST(MatchTest, EmptySets) {
    const auto both = match_points({}, {}, 5.0);
    EXPECT_EQ(both.tp + both.fp + both.fn, 0);
    const auto no_pred = match_points({}, {{1.0, 1.0}}, 5.0);
    EXPECT_EQ(no_pred.fn, 1);
    const auto no_gt = match_points({{1.0, 1.0}}, {}, 5.0);
    EXPECT_EQ(no_gt.fp, 1);
    EXPECT_THROW(match_points({}, {}, 0.0), fsloc::ValueError);
}

TEST(MatchTest, OneToOneNoDoubleCounting) {
    // two predictions near one gt: only one can match
    const PointList pred = {{0.0, 0.0}, {1.0, 0.0}};
    const PointList gt = {{0.5, 0.0}};
    const auto m = match_points(pred, gt, 5.0);
    EXPECT_EQ(m.tp, 1);
    EXPECT_EQ(m.fp, 1);
    EXPECT_EQ(m.fn, 0);
}

TEST(MatchTest, MaximizesPairCountBeforeDistance) {
    // a greedy nearest-first pairing would grab (p0, g0) and strand p1
    const PointList pred = {{0.0, 0.0}, {1.0, 0.0}};
    const PointList gt = {{0.4, 0.0}, {-2.0, 0.0}};
    const auto m = match_points(pred, gt, 2.5);
    EXPECT_EQ(m.tp, 2);
}

TEST(MatchTest, FiveVsFourAgainstBruteForce) {
    fsloc::Rng rng(19);
    const auto pred = fsloc::verify::detail_v::random_points(rng, 5, 0.0, 15.0);
    const auto gt = fsloc::verify::detail_v::random_points(rng, 4, 0.0, 15.0);
    const auto fast = match_points(pred, gt, 10.0);
    const auto brute = fsloc::reference::brute_force_match(pred, gt, 10.0);
    EXPECT_EQ(fast.tp, brute.tp);
    EXPECT_NEAR(fast.total_distance(), brute.total_distance, 1e-9);
}

TEST(PrF1Test, Fixtures) {
    const auto zero = fsloc::prf1(0, 0, 0);
    EXPECT_DOUBLE_EQ(zero.precision, 0.0);
    EXPECT_DOUBLE_EQ(zero.recall, 0.0);
    EXPECT_DOUBLE_EQ(zero.f1, 0.0);

    const auto half = fsloc::prf1(1, 1, 0);
    EXPECT_DOUBLE_EQ(half.precision, 0.5);
    EXPECT_DOUBLE_EQ(half.recall, 1.0);
    EXPECT_NEAR(half.f1, 2.0 / 3.0, 1e-15);

    const auto mixed = fsloc::prf1(59, 41, 30);
    EXPECT_DOUBLE_EQ(mixed.precision, 0.59);
    EXPECT_NEAR(mixed.recall, 59.0 / 89.0, 1e-15);
    EXPECT_NEAR(mixed.f1,
                2.0 * mixed.precision * mixed.recall / (mixed.precision + mixed.recall),
                1e-15);
}

TEST(CountingTest, Fixtures) {
    const auto exact = fsloc::counting_errors({3, 2, 8}, {3, 2, 8});
    EXPECT_DOUBLE_EQ(exact.mae, 0.0);
    EXPECT_DOUBLE_EQ(exact.rmse, 0.0);

    const auto off = fsloc::counting_errors({3, 2}, {2, 4});
    EXPECT_DOUBLE_EQ(off.mae, 1.5);
    EXPECT_NEAR(off.rmse, std::sqrt(2.5), 1e-15);

    EXPECT_THROW(fsloc::counting_errors({}, {}), fsloc::ValueError);
    EXPECT_THROW(fsloc::counting_errors({1, 2}, {1}), fsloc::ValueError);
}

TEST(MetricsSuiteTest, MatchingOracle) {
    const auto result = fsloc::verify::matching_oracle_suite(23, 150);
    EXPECT_TRUE(result.pass) << result.detail;
}

TEST(MetricsSuiteTest, Formulas) {
    const auto result = fsloc::verify::metric_formula_suite(29, 300);
    EXPECT_TRUE(result.pass) << result.detail;
}

TEST(ReportTest, RenderedBlocksCoverEverySigma) {
    fsloc::MetricsReport report;
    report.images = 2;
    report.mae = 0.5;
    report.rmse = 1.0;
    for (double sigma : {5.0, 10.0}) {
        fsloc::SigmaBlock block;
        block.sigma = sigma;
        block.tp = 7;
        block.fp = 1;
        block.fn = 2;
        block.rates = fsloc::prf1(7, 1, 2);
        report.blocks.push_back(block);
    }
    const auto text = fsloc::render_metrics_text(report);
    EXPECT_NE(text.find("[sigma 5.000000]"), std::string::npos);
    EXPECT_NE(text.find("[sigma 10.000000]"), std::string::npos);
    EXPECT_NE(text.find("mae: 0.500000"), std::string::npos);
    const auto tsv = fsloc::render_metrics_tsv(report);
    EXPECT_NE(tsv.find("sigma\ttp\tfp\tfn\tprecision\trecall\tf1\tmae\trmse\timages"),
              std::string::npos);
}
