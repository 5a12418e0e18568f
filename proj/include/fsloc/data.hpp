#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsloc/image.hpp"
#include "fsloc/point.hpp"
#include "fsloc/rng.hpp"

namespace fsloc {

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

// One few-shot unit: a query image, a single exemplar box, and the annotated
// object centers.
struct Episode {
    std::string id;
    ImageU8 image;
    Box exemplar;
    PointList points;
    std::string klass;
    Split split = Split::Train;
};

inline void validate_episode(const Episode& ep) {
    const double w = ep.image.width, h = ep.image.height;
    if (!(ep.exemplar.area() > 0.0))
        throw ValueError(detail::msg("episode ", ep.id, ": exemplar box has no area"));
    if (ep.exemplar.x1 < 0 || ep.exemplar.y1 < 0 || ep.exemplar.x2 > w || ep.exemplar.y2 > h)
        throw ValueError(detail::msg("episode ", ep.id, ": exemplar box out of bounds"));
    for (std::size_t i = 0; i < ep.points.size(); ++i)
        if (!(ep.points[i].x >= 0 && ep.points[i].x < w && ep.points[i].y >= 0 &&
              ep.points[i].y < h))
            throw ValueError(detail::msg("episode ", ep.id, ": point ", i, " out of bounds"));
    bool encloses = false;
    for (const auto& p : ep.points)
        if (ep.exemplar.contains(p)) encloses = true;
    if (!encloses)
        throw ValueError(detail::msg("episode ", ep.id, ": exemplar box encloses no point"));
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

enum class ShapeClass { Disc, Square, Triangle };

inline const char* shape_name(ShapeClass s) {
    switch (s) {
        case ShapeClass::Disc: return "disc";
        case ShapeClass::Square: return "square";
        default: return "triangle";
    }
}

struct SynthConfig {
    int canvas = 64;
    int min_count = 3;
    int max_count = 6;
    double min_radius = 3.5;
    double max_radius = 5.5;
    double min_center_dist = 12.0;
    double intensity_lo = 0.55;      // object brightness jitter range
    double intensity_hi = 0.95;
    double noise = 0.02;             // background noise amplitude
    int max_retries = 500;

    std::string echo() const {
        return detail::msg("canvas=", canvas, " count=[", min_count, ",", max_count,
                           "] radius=[", min_radius, ",", max_radius,
                           "] min_center_dist=", min_center_dist);
    }
};

namespace detail {

inline bool inside_shape(ShapeClass shape, double dx, double dy, double r) {
    switch (shape) {
        case ShapeClass::Disc:
            return dx * dx + dy * dy <= r * r;
        case ShapeClass::Square:
            return std::abs(dx) <= r && std::abs(dy) <= r;
        case ShapeClass::Triangle: {
            // upward triangle: apex (0,-r), base corners (-r,+r), (+r,+r)
            if (dy < -r || dy > r) return false;
            const double half_width = (dy + r) / 2.0;
            return std::abs(dx) <= half_width;
        }
    }
    return false;
}

}  // namespace detail

// Renders K objects of one class, records each center as a GT point, and
// takes the first object's bounding box as the exemplar. Bit-reproducible
// for a given seed.
inline Episode generate_scene(const SynthConfig& cfg, ShapeClass shape, std::uint64_t seed,
                              const std::string& id = "") {
    if (cfg.min_count < 1 || cfg.max_count < cfg.min_count)
        throw ValueError(detail::msg("bad synth count range: ", cfg.echo()));
    Rng rng(seed);
    const int K = rng.uniform_int(cfg.min_count, cfg.max_count);
    const double margin = cfg.max_radius + 1.0;

    std::vector<Point> centers;
    std::vector<double> radii;
    int retries = 0;
    while (static_cast<int>(centers.size()) < K) {
        if (++retries > cfg.max_retries * cfg.max_count)
            throw ValueError(detail::msg("infeasible synthetic packing after ", retries,
                                         " retries: ", cfg.echo()));
        Point c{rng.uniform(margin, cfg.canvas - margin), rng.uniform(margin, cfg.canvas - margin)};
        bool ok = true;
        for (const auto& other : centers)
            if (point_distance(c, other) < cfg.min_center_dist) ok = false;
        if (!ok) continue;
        centers.push_back(c);
        radii.push_back(rng.uniform(cfg.min_radius, cfg.max_radius));
    }

    Episode ep;
    ep.id = id.empty() ? detail::msg(shape_name(shape), "_", seed) : id;
    ep.klass = shape_name(shape);
    ep.image = ImageU8{cfg.canvas, cfg.canvas, 3,
                       std::vector<std::uint8_t>(
                           static_cast<std::size_t>(cfg.canvas) * cfg.canvas * 3)};
    for (auto& px : ep.image.pixels)
        px = static_cast<std::uint8_t>(std::lround(rng.uniform(0.0, cfg.noise) * 255.0));

    for (int k = 0; k < K; ++k) {
        const double base = rng.uniform(cfg.intensity_lo, cfg.intensity_hi);
        double tint[3];
        for (double& t : tint) t = base * rng.uniform(0.85, 1.0);
        const auto& c = centers[static_cast<std::size_t>(k)];
        const double r = radii[static_cast<std::size_t>(k)];
        const int y_lo = std::max(0, static_cast<int>(std::floor(c.y - r)));
        const int y_hi = std::min(cfg.canvas - 1, static_cast<int>(std::ceil(c.y + r)));
        const int x_lo = std::max(0, static_cast<int>(std::floor(c.x - r)));
        const int x_hi = std::min(cfg.canvas - 1, static_cast<int>(std::ceil(c.x + r)));
        for (int y = y_lo; y <= y_hi; ++y)
            for (int x = x_lo; x <= x_hi; ++x)
                if (detail::inside_shape(shape, x - c.x, y - c.y, r))
                    for (int ch = 0; ch < 3; ++ch)
                        ep.image.at(y, x, ch) = static_cast<std::uint8_t>(
                            std::lround(tint[ch] * 255.0));
        ep.points.push_back(c);
    }

    const auto& c0 = centers[0];
    const double r0 = radii[0];
    ep.exemplar = Box{std::max(0.0, c0.x - r0), std::max(0.0, c0.y - r0),
                      std::min<double>(cfg.canvas, c0.x + r0),
                      std::min<double>(cfg.canvas, c0.y + r0)};
    validate_episode(ep);
    return ep;
}

inline std::vector<Episode> generate_scenes(const SynthConfig& cfg,
                                            const std::vector<ShapeClass>& classes, int count,
                                            std::uint64_t base_seed, Split split) {
    std::vector<Episode> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const ShapeClass shape = classes[static_cast<std::size_t>(i) % classes.size()];
        Episode ep = generate_scene(cfg, shape, base_seed + static_cast<std::uint64_t>(i),
                                    detail::msg(split_name(split), "_", shape_name(shape), "_", i));
        ep.split = split;
        out.push_back(std::move(ep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Point-annotation datasets
// ---------------------------------------------------------------------------

struct LoadReport {
    std::vector<Episode> episodes;
    int skipped = 0;
    std::vector<std::string> diagnostics;
};

// Annotation document: {"<image>": {"points": [[x,y],...],
// "boxes": [[x1,y1,x2,y2],...], "class": "<label>"}}. Coordinates are in
// original-image pixels; images and points are rescaled to target_size. The
// first listed box becomes the one-shot exemplar.
inline LoadReport load_annotations(const std::string& root, int target_size,
                                   const std::string& annotation_file = "annotations.json") {
    LoadReport report;
    const std::string ann_path = root + "/" + annotation_file;
    std::ifstream in(ann_path);
    if (!in) throw IoError(detail::msg("cannot open annotation document ", ann_path));
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw IoError(detail::msg(ann_path, ": malformed JSON: ", e.what()));
    }
    if (!doc.is_object()) throw IoError(detail::msg(ann_path, ": top level must be an object"));
    if (doc.empty())
        report.diagnostics.push_back("annotation document is empty: no episodes loaded");

    std::vector<std::string> names;
    for (auto it = doc.begin(); it != doc.end(); ++it) names.push_back(it.key());
    std::sort(names.begin(), names.end());

    for (const auto& name : names) {
        const auto& rec = doc[name];
        auto reject = [&](const std::string& why) {
            ++report.skipped;
            report.diagnostics.push_back(detail::msg(name, ": ", why));
        };
        try {
            if (!rec.is_object() || !rec.contains("points") || !rec.contains("boxes")) {
                reject("record must hold 'points' and 'boxes'");
                continue;
            }
            Episode ep;
            ep.id = name;
            ep.klass = rec.value("class", std::string("unknown"));
            ep.image = read_image(root + "/" + name);
            const double fx = static_cast<double>(target_size) / ep.image.width;
            const double fy = static_cast<double>(target_size) / ep.image.height;
            ep.image = resize_bilinear(ep.image, target_size, target_size);
            for (const auto& p : rec["points"]) {
                if (!p.is_array() || p.size() != 2) throw ValueError("malformed point");
                ep.points.push_back({p[0].get<double>() * fx, p[1].get<double>() * fy});
            }
            const auto& boxes = rec["boxes"];
            if (!boxes.is_array() || boxes.empty()) throw ValueError("no exemplar boxes");
            const auto& b = boxes[0];
            if (!b.is_array() || b.size() != 4) throw ValueError("malformed box");
            ep.exemplar = Box{b[0].get<double>() * fx, b[1].get<double>() * fy,
                              b[2].get<double>() * fx, b[3].get<double>() * fy};
            validate_episode(ep);
            report.episodes.push_back(std::move(ep));
        } catch (const std::exception& e) {
            reject(e.what());
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

enum class SplitProtocol { ClassDisjoint, RandomByImage };

struct SplitResult {
    std::vector<Episode> train, val, test;
};

// Class-disjoint: no class appears in two partitions (few-shot protocol).
// RandomByImage: plain shuffled split, for synthetic smoke tests.
inline SplitResult split_episodes(std::vector<Episode> episodes, SplitProtocol protocol,
                                  double train_frac, double val_frac, std::uint64_t seed) {
    SplitResult out;
    Rng rng(seed);
    auto assign = [&](Episode ep, Split s) {
        ep.split = s;
        (s == Split::Train ? out.train : s == Split::Val ? out.val : out.test)
            .push_back(std::move(ep));
    };

    if (protocol == SplitProtocol::RandomByImage) {
        // Fisher-Yates with the project RNG
        for (std::size_t i = episodes.size(); i > 1; --i)
            std::swap(episodes[i - 1],
                      episodes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        const auto n = episodes.size();
        const auto n_train = static_cast<std::size_t>(train_frac * static_cast<double>(n));
        const auto n_val = static_cast<std::size_t>(val_frac * static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            assign(std::move(episodes[i]),
                   i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test);
        return out;
    }

    std::map<std::string, std::vector<Episode>> by_class;
    for (auto& ep : episodes) by_class[ep.klass].push_back(std::move(ep));
    if (by_class.size() < 2)
        throw ValueError(detail::msg("class-disjoint split needs >= 2 classes, got ",
                                     by_class.size()));
    std::vector<std::string> classes;
    for (auto& [k, v] : by_class) classes.push_back(k);
    for (std::size_t i = classes.size(); i > 1; --i)
        std::swap(classes[i - 1],
                  classes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    const auto nc = classes.size();
    auto n_train = static_cast<std::size_t>(train_frac * static_cast<double>(nc));
    auto n_val = static_cast<std::size_t>(val_frac * static_cast<double>(nc));
    // every partition with a nonzero fraction gets at least one class
    if (train_frac > 0 && n_train == 0) n_train = 1;
    if (val_frac > 0 && n_val == 0) n_val = 1;
    if (n_train + n_val >= nc) n_train = nc - n_val - 1;
    for (std::size_t i = 0; i < nc; ++i) {
        const Split s = i < n_train ? Split::Train : i < n_train + n_val ? Split::Val
                                                                         : Split::Test;
        for (auto& ep : by_class[classes[i]]) assign(std::move(ep), s);
    }
    return out;
}

}  // namespace fsloc
