#include "lidet/geometry.hpp"

#include <cmath>

#include "lidet/error.hpp"
#include "lidet/tensor.hpp"

namespace lidet {

Polygon bev_corners(const Box3D& b) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    const double hl = b.l / 2.0, hw = b.w / 2.0;
    // CCW in the local frame
    const double lx[4] = {hl, -hl, -hl, hl};
    const double ly[4] = {hw, hw, -hw, -hw};
    Polygon p(4);
    for (int i = 0; i < 4; ++i) {
        p[i].x = b.cx + c * lx[i] - s * ly[i];
        p[i].y = b.cy + s * lx[i] + c * ly[i];
    }
    return p;
}

double polygon_area(const Polygon& p) {
    if (p.size() < 3) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Vec2& a = p[i];
        const Vec2& b = p[(i + 1) % p.size()];
        acc += a.x * b.y - b.x * a.y;
    }
    return std::fabs(acc) / 2.0;
}

namespace {

inline double edge_side(const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

inline Vec2 edge_intersect(const Vec2& a, const Vec2& b, const Vec2& p, const Vec2& q) {
    const double a1 = b.y - a.y, b1 = a.x - b.x, c1 = a1 * a.x + b1 * a.y;
    const double a2 = q.y - p.y, b2 = p.x - q.x, c2 = a2 * p.x + b2 * p.y;
    const double det = a1 * b2 - a2 * b1;
    Vec2 r;
    r.x = (b2 * c1 - b1 * c2) / det;
    r.y = (a1 * c2 - a2 * c1) / det;
    return r;
}

} // namespace

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
    Polygon out = subject;
    for (std::size_t i = 0; i < clip.size() && !out.empty(); ++i) {
        const Vec2& a = clip[i];
        const Vec2& b = clip[(i + 1) % clip.size()];
        Polygon in = std::move(out);
        out.clear();
        for (std::size_t j = 0; j < in.size(); ++j) {
            const Vec2& cur = in[j];
            const Vec2& prev = in[(j + in.size() - 1) % in.size()];
            const bool cur_in = edge_side(a, b, cur) >= 0.0;
            const bool prev_in = edge_side(a, b, prev) >= 0.0;
            if (cur_in) {
                if (!prev_in) out.push_back(edge_intersect(a, b, prev, cur));
                out.push_back(cur);
            } else if (prev_in) {
                out.push_back(edge_intersect(a, b, prev, cur));
            }
        }
    }
    return out;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
    return polygon_area(clip_convex(bev_corners(a), bev_corners(b)));
}

double rotated_bev_iou(const Box3D& a, const Box3D& b) {
    const double area_a = a.l * a.w;
    const double area_b = b.l * b.w;
    if (area_a <= 0.0 || area_b <= 0.0) {
        throw ShapeError("rotated_bev_iou: degenerate zero-area box");
    }
    const double inter = bev_intersection_area(a, b);
    const double uni = area_a + area_b - inter;
    const double iou = inter / uni;
    return iou < 0.0 ? 0.0 : (iou > 1.0 ? 1.0 : iou);
}

double bev_center_distance(const Box3D& a, const Box3D& b) {
    return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

} // namespace lidet
