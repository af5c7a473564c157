#pragma once

#include <algorithm>
#include <cmath>

namespace mplt {

/// Axis-aligned box: top-left corner and extent in pixels.
struct BBox {
    double x = 0, y = 0, w = 0, h = 0;
    double confidence = 0;

    double cx() const { return x + w / 2; }
    double cy() const { return y + h / 2; }
    double area() const { return w * h; }
    bool valid() const { return w > 0 && h > 0 && std::isfinite(x) && std::isfinite(y); }

    static BBox from_center(double cx, double cy, double w, double h, double confidence = 0) {
        return {cx - w / 2, cy - h / 2, w, h, confidence};
    }
};

inline bool same_geometry(const BBox& a, const BBox& b) {
    return a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h;
}

inline double intersection_area(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
    const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
    return std::max(0.0, iw) * std::max(0.0, ih);
}

inline double iou(const BBox& a, const BBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Generalized IoU: IoU - (enclosing - union) / enclosing.
inline double giou(const BBox& a, const BBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    const double ew = std::max(a.x + a.w, b.x + b.w) - std::min(a.x, b.x);
    const double eh = std::max(a.y + a.h, b.y + b.h) - std::min(a.y, b.y);
    const double enclosing = ew * eh;
    return inter / uni - (enclosing - uni) / enclosing;
}

/// Center location error in pixels.
inline double cle(const BBox& a, const BBox& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

}  // namespace mplt
