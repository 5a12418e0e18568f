#pragma once

#include <cmath>
#include <vector>

namespace fsloc {

// Image-plane coordinates: x rightward, y downward, origin top-left.
struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double point_distance(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

using PointList = std::vector<Point>;

struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool contains(const Point& p) const {
        return p.x >= x1 && p.x <= x2 && p.y >= y1 && p.y <= y2;
    }
};

}  // namespace fsloc
