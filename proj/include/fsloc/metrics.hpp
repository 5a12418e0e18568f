#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fsloc/assignment.hpp"
#include "fsloc/point.hpp"
#include "fsloc/shape.hpp"

namespace fsloc {

struct MatchResult {
    std::vector<std::pair<int, int>> pairs;  // (pred index, gt index), sorted
    std::vector<double> distances;           // aligned with pairs
    int tp = 0;
    int fp = 0;
    int fn = 0;
    double sigma = 0.0;

    double total_distance() const {
        double s = 0.0;
        for (double d : distances) s += d;
        return s;
    }
};

// Optimal one-to-one gated assignment: maximize the number of pairs within
// sigma first, minimize total distance among those. Realized by running the
// Hungarian solver on a cost matrix where every feasible pair is rewarded by
// a constant large enough to dominate any distance total.
inline MatchResult match_points(const PointList& pred, const PointList& gt, double sigma) {
    if (!(sigma > 0.0))
        throw ValueError(detail::msg("match_points needs sigma > 0, got ", sigma));
    MatchResult result;
    result.sigma = sigma;
    const int np = static_cast<int>(pred.size());
    const int ng = static_cast<int>(gt.size());
    if (np == 0 || ng == 0) {
        result.fp = np;
        result.fn = ng;
        return result;
    }

    const bool transposed = np > ng;
    const int rows = transposed ? ng : np;
    const int cols = transposed ? np : ng;
    const double reward = sigma * std::min(np, ng) + 1.0;
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(rows),
                                          std::vector<double>(static_cast<std::size_t>(cols)));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            const Point& a = transposed ? gt[static_cast<std::size_t>(i)]
                                        : pred[static_cast<std::size_t>(i)];
            const Point& b = transposed ? pred[static_cast<std::size_t>(j)]
                                        : gt[static_cast<std::size_t>(j)];
            const double d = point_distance(a, b);
            cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                d <= sigma ? d - reward : 0.0;
        }

    const auto assignment = hungarian_min_cost(cost);
    for (int i = 0; i < rows; ++i) {
        const int j = assignment[static_cast<std::size_t>(i)];
        if (j < 0) continue;
        const int pi = transposed ? j : i;
        const int gi = transposed ? i : j;
        const double d = point_distance(pred[static_cast<std::size_t>(pi)],
                                        gt[static_cast<std::size_t>(gi)]);
        if (d <= sigma) {
            result.pairs.emplace_back(pi, gi);
            result.distances.push_back(d);
        }
    }
    // report pairs in (pred index, gt index) order
    std::vector<std::size_t> order(result.pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return result.pairs[a] < result.pairs[b];
    });
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> dists;
    for (std::size_t i : order) {
        pairs.push_back(result.pairs[i]);
        dists.push_back(result.distances[i]);
    }
    result.pairs = std::move(pairs);
    result.distances = std::move(dists);
    result.tp = static_cast<int>(result.pairs.size());
    result.fp = np - result.tp;
    result.fn = ng - result.tp;
    return result;
}

struct Rates {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Zero denominators yield 0 by convention.
inline Rates prf1(int tp, int fp, int fn) {
    Rates r;
    r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

inline Rates prf1(const MatchResult& m) { return prf1(m.tp, m.fp, m.fn); }

struct CountingErrors {
    double mae = 0.0;
    double rmse = 0.0;
};

inline CountingErrors counting_errors(const std::vector<int>& gt_counts,
                                      const std::vector<int>& pred_counts) {
    if (gt_counts.empty() || gt_counts.size() != pred_counts.size())
        throw ValueError(detail::msg("counting_errors needs N >= 1 matched count lists, got ",
                                     gt_counts.size(), " and ", pred_counts.size()));
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < gt_counts.size(); ++i) {
        const double d = static_cast<double>(gt_counts[i]) - pred_counts[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    const double n = static_cast<double>(gt_counts.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

struct SigmaBlock {
    double sigma = 0.0;
    long long tp = 0, fp = 0, fn = 0;
    Rates rates;
};

struct PerImageCounts {
    std::string id;
    int gt = 0;
    int pred = 0;
};

struct MetricsReport {
    std::vector<SigmaBlock> blocks;  // one per threshold, ascending sigma
    double mae = 0.0;
    double rmse = 0.0;
    int images = 0;
    std::vector<PerImageCounts> per_image;
};

inline std::string render_metrics_text(const MetricsReport& r) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "images: " << r.images << "\n";
    os << "mae: " << r.mae << "\n";
    os << "rmse: " << r.rmse << "\n";
    for (const auto& b : r.blocks) {
        os << "[sigma " << b.sigma << "]\n";
        os << "tp: " << b.tp << "\n";
        os << "fp: " << b.fp << "\n";
        os << "fn: " << b.fn << "\n";
        os << "precision: " << b.rates.precision << "\n";
        os << "recall: " << b.rates.recall << "\n";
        os << "f1: " << b.rates.f1 << "\n";
    }
    return os.str();
}

inline std::string render_metrics_tsv(const MetricsReport& r) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    os << "sigma\ttp\tfp\tfn\tprecision\trecall\tf1\tmae\trmse\timages\n";
    for (const auto& b : r.blocks)
        os << b.sigma << "\t" << b.tp << "\t" << b.fp << "\t" << b.fn << "\t"
           << b.rates.precision << "\t" << b.rates.recall << "\t" << b.rates.f1 << "\t"
           << r.mae << "\t" << r.rmse << "\t" << r.images << "\n";
    return os.str();
}

}  // namespace fsloc
