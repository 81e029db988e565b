#pragma once

#include <vector>

#include "lidet/box.hpp"

namespace lidet {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

using Polygon = std::vector<Vec2>;

// Counter-clockwise BEV corners of a box footprint.
Polygon bev_corners(const Box3D& b);

// Signed area is positive for counter-clockwise rings; returns |area|.
double polygon_area(const Polygon& p);

// Sutherland-Hodgman clip of a convex subject against a convex CCW clip ring.
Polygon clip_convex(const Polygon& subject, const Polygon& clip);

// BEV intersection area of two box footprints.
double bev_intersection_area(const Box3D& a, const Box3D& b);

// Rotated BEV IoU in [0,1]; throws ShapeError for zero-area boxes.
double rotated_bev_iou(const Box3D& a, const Box3D& b);

double bev_center_distance(const Box3D& a, const Box3D& b);

} // namespace lidet
