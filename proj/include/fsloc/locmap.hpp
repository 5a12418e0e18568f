#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fsloc/point.hpp"
#include "fsloc/tensor.hpp"

namespace fsloc {

// Single-channel map at image resolution; row-major values.
template <typename T>
struct LocationMap {
    int height = 0;
    int width = 0;
    std::vector<T> values;

    T at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    T& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
};

template <typename T>
Tensor<T> to_tensor(const LocationMap<T>& map) {
    return Tensor<T>({1, 1, map.height, map.width}, map.values);
}

template <typename T>
LocationMap<T> map_from_tensor(const Tensor<T>& t) {
    if (t.ndim() != 4 || t.dim(0) != 1 || t.dim(1) != 1)
        throw ShapeError(detail::msg("expected a 1x1xHxW map tensor, got ",
                                     shape_str(t.shape())));
    return LocationMap<T>{t.dim(2), t.dim(3), t.values()};
}

enum class EncodeKind { InverseDistance, Gaussian };

// Inverse-distance encoding: value = 1 / (D^(alpha*D + beta) + c0) with D the
// Euclidean distance to the nearest annotated pixel. The Gaussian form is an
// alternative encoder kept for ablation runs.
struct EncodeConfig {
    EncodeKind kind = EncodeKind::InverseDistance;
    double alpha = 0.02;
    double beta = 0.75;
    double c0 = 1.0;
    double gaussian_sigma = 2.0;
};

namespace detail {

constexpr double kEdtInf = 1e20;

// 1-D squared distance transform (lower envelope of parabolas).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    d.assign(f.size(), 0.0);
    std::vector<int> v(f.size(), 0);
    std::vector<double> z(f.size() + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -kEdtInf;
    z[1] = kEdtInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kEdtInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[static_cast<std::size_t>(q)] = (q - v[k]) * static_cast<double>(q - v[k]) +
                                         f[static_cast<std::size_t>(v[k])];
    }
}

// Exact squared Euclidean distance to the nearest seed pixel.
inline std::vector<double> edt_2d(int h, int w, const std::vector<bool>& seed) {
    std::vector<double> dist(static_cast<std::size_t>(h) * w, kEdtInf);
    for (std::size_t i = 0; i < dist.size(); ++i)
        if (seed[i]) dist[i] = 0.0;
    std::vector<double> col(static_cast<std::size_t>(h)), cold;
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = dist[static_cast<std::size_t>(y) * w + x];
        edt_1d(col, cold);
        for (int y = 0; y < h; ++y) dist[static_cast<std::size_t>(y) * w + x] = cold[static_cast<std::size_t>(y)];
    }
    std::vector<double> row(static_cast<std::size_t>(w)), rowd;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = dist[static_cast<std::size_t>(y) * w + x];
        edt_1d(row, rowd);
        for (int x = 0; x < w; ++x) dist[static_cast<std::size_t>(y) * w + x] = rowd[static_cast<std::size_t>(x)];
    }
    return dist;
}

}  // namespace detail

template <typename T>
LocationMap<T> encode_location_map(const PointList& points, int height, int width,
                                   const EncodeConfig& cfg = {}) {
    if (height < 1 || width < 1)
        throw ValueError("encode_location_map needs a positive canvas");
    LocationMap<T> map{height, width,
                       std::vector<T>(static_cast<std::size_t>(height) * width, T(0))};
    if (points.empty()) return map;

    std::vector<bool> seed(static_cast<std::size_t>(height) * width, false);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height))
            throw ValueError(detail::msg("point ", i, " at (", p.x, ",", p.y,
                                         ") outside ", width, "x", height, " canvas"));
        const int px = std::min(static_cast<int>(std::lround(p.x)), width - 1);
        const int py = std::min(static_cast<int>(std::lround(p.y)), height - 1);
        seed[static_cast<std::size_t>(py) * width + px] = true;
    }

    const auto dist2 = detail::edt_2d(height, width, seed);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
        const double d = std::sqrt(dist2[i]);
        double v;
        if (cfg.kind == EncodeKind::Gaussian) {
            v = std::exp(-(d * d) / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma));
        } else {
            v = 1.0 / (std::pow(d, cfg.alpha * d + cfg.beta) + cfg.c0);
        }
        map.values[i] = static_cast<T>(v);
    }
    return map;
}

// Local-maxima decoder. T_a defaults to 100/255 with the dense (40/255) and
// sparse (60/255) dataset presets selectable; candidates must also clear the
// absolute floor of 0.06. When `relative` is set (the default), T_a is taken
// as a fraction of the map maximum; otherwise it is an absolute cutoff.
struct DecoderConfig {
    double threshold = 100.0 / 255.0;
    double floor = 0.06;
    bool relative = true;

    static DecoderConfig dense() { return {40.0 / 255.0, 0.06, true}; }
    static DecoderConfig sparse() { return {60.0 / 255.0, 0.06, true}; }

    void validate() const {
        if (!(threshold > 0.0 && threshold <= 1.0))
            throw ValueError(detail::msg("decoder threshold must lie in (0,1], got ", threshold));
        if (!(floor >= 0.0 && floor < 1.0))
            throw ValueError(detail::msg("decoder floor must lie in [0,1), got ", floor));
    }
};

// A pixel is a candidate iff it equals the maximum of its 3x3 neighborhood;
// flat plateaus keep only the scan-order-first ((y,x) lexicographic smallest)
// pixel. Returns integer (x, y) coordinates.
template <typename T>
PointList decode_peaks(const LocationMap<T>& map, const DecoderConfig& cfg = {}) {
    cfg.validate();
    for (const T v : map.values)
        if (!std::isfinite(static_cast<double>(v)))
            throw ValueError("decode_peaks: non-finite map entry");
    PointList peaks;
    if (map.values.empty()) return peaks;
    const double peak = static_cast<double>(*std::max_element(map.values.begin(),
                                                              map.values.end()));
    const double cutoff = cfg.relative ? cfg.threshold * peak : cfg.threshold;
    for (int y = 0; y < map.height; ++y)
        for (int x = 0; x < map.width; ++x) {
            const double v = static_cast<double>(map.at(y, x));
            if (!(v > cutoff && v > cfg.floor)) continue;
            bool keep = true;
            for (int dy = -1; dy <= 1 && keep; ++dy)
                for (int dx = -1; dx <= 1 && keep; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= map.height || nx < 0 || nx >= map.width) continue;
                    const double nv = static_cast<double>(map.at(ny, nx));
                    const bool earlier = dy < 0 || (dy == 0 && dx < 0);
                    if (earlier ? nv >= v : nv > v) keep = false;
                }
            if (keep) peaks.push_back({static_cast<double>(x), static_cast<double>(y)});
        }
    return peaks;
}

}  // namespace fsloc
