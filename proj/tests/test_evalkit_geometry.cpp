#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lidet/geometry.hpp"
#include "lidet/rng.hpp"

using namespace lidet;

namespace {

Box3D make_box(double cx, double cy, double l, double w, double yaw) {
    Box3D b;
    b.cx = cx;
    b.cy = cy;
    b.l = l;
    b.w = w;
    b.h = 1.0;
    b.yaw = yaw;
    return b;
}

// Monte-Carlo IoU: estimate the intersection area by sampling uniformly
// inside each box and testing membership in the other, then average the two
// one-sided estimates.
double monte_carlo_iou(const Box3D& a, const Box3D& b, int samples, std::uint64_t seed) {
    Rng rng(seed);
    auto inside = [](const Box3D& box, double px, double py) {
        const double c = std::cos(box.yaw), s = std::sin(box.yaw);
        const double dx = px - box.cx, dy = py - box.cy;
        const double lx = c * dx + s * dy;
        const double ly = -s * dx + c * dy;
        return std::fabs(lx) <= box.l / 2.0 && std::fabs(ly) <= box.w / 2.0;
    };
    auto hit_fraction = [&](const Box3D& src, const Box3D& dst, int n) {
        int hits = 0;
        const double c = std::cos(src.yaw), s = std::sin(src.yaw);
        for (int i = 0; i < n; ++i) {
            const double lx = rng.uniform(-src.l / 2.0, src.l / 2.0);
            const double ly = rng.uniform(-src.w / 2.0, src.w / 2.0);
            const double px = src.cx + c * lx - s * ly;
            const double py = src.cy + s * lx + c * ly;
            if (inside(dst, px, py)) ++hits;
        }
        return static_cast<double>(hits) / n;
    };
    const double inter_a = hit_fraction(a, b, samples / 2) * a.l * a.w;
    const double inter_b = hit_fraction(b, a, samples / 2) * b.l * b.w;
    const double inter = 0.5 * (inter_a + inter_b);
    const double uni = a.l * a.w + b.l * b.w - inter;
    return inter / uni;
}

} // namespace

TEST_CASE("identical boxes give IoU 1") {
    Box3D a = make_box(1.0, 2.0, 4.0, 2.0, 0.7);
    CHECK(rotated_bev_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("disjoint boxes give IoU 0") {
    Box3D a = make_box(0.0, 0.0, 2.0, 1.0, 0.3);
    Box3D b = make_box(10.0, 10.0, 2.0, 1.0, -0.8);
    CHECK(rotated_bev_iou(a, b) == 0.0);
}

TEST_CASE("half-offset unit squares give exactly 1/3") {
    Box3D a = make_box(0.0, 0.0, 1.0, 1.0, 0.0);
    Box3D b = make_box(0.5, 0.0, 1.0, 1.0, 0.0);
    CHECK(rotated_bev_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    // cross-check against Monte-Carlo
    CHECK(std::fabs(monte_carlo_iou(a, b, 100000, 5) - 1.0 / 3.0) < 0.01);
}

TEST_CASE("degenerate zero-area box is a contract error") {
    Box3D a = make_box(0.0, 0.0, 0.0, 1.0, 0.0);
    Box3D b = make_box(0.0, 0.0, 1.0, 1.0, 0.0);
    CHECK_THROWS(rotated_bev_iou(a, b));
}

TEST_CASE("IoU is symmetric, bounded, and rigid-transform invariant") {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        Box3D a = make_box(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 4.0),
                           rng.uniform(0.5, 3.0), rng.uniform(-3.1, 3.1));
        Box3D b = make_box(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.5, 4.0),
                           rng.uniform(0.5, 3.0), rng.uniform(-3.1, 3.1));
        const double iou = rotated_bev_iou(a, b);
        CHECK(iou >= 0.0);
        CHECK(iou <= 1.0);
        CHECK(rotated_bev_iou(b, a) == doctest::Approx(iou).epsilon(1e-12));

        // joint rigid transform
        const double phi = rng.uniform(-3.0, 3.0);
        const double tx = rng.uniform(-5.0, 5.0), ty = rng.uniform(-5.0, 5.0);
        auto moved = [&](const Box3D& in) {
            Box3D o = in;
            const double c = std::cos(phi), s = std::sin(phi);
            o.cx = c * in.cx - s * in.cy + tx;
            o.cy = s * in.cx + c * in.cy + ty;
            o.yaw = wrap_angle(in.yaw + phi);
            return o;
        };
        CHECK(rotated_bev_iou(moved(a), moved(b)) == doctest::Approx(iou).epsilon(1e-9));
    }
}

TEST_CASE("polygon clipping matches Monte-Carlo on random pairs") {
    Rng rng(23);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        Box3D a = make_box(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.8, 4.0),
                           rng.uniform(0.8, 3.0), rng.uniform(-3.1, 3.1));
        Box3D b = make_box(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.8, 4.0),
                           rng.uniform(0.8, 3.0), rng.uniform(-3.1, 3.1));
        const double exact = rotated_bev_iou(a, b);
        const double mc = monte_carlo_iou(a, b, 100000, 100 + static_cast<std::uint64_t>(t));
        worst = std::max(worst, std::fabs(exact - mc));
    }
    CHECK(worst < 0.01);
}
