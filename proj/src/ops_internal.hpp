#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lidet/tape.hpp"
#include "lidet/tensor.hpp"

// Shared machinery between op forwards (ops.cpp) and tape backward
// (tape.cpp). Not part of the public surface.
namespace lidet::detail {

// Broadcast layout: output dims plus per-input strides (0 on broadcast axes).
struct BcastPlan {
    std::vector<std::int64_t> dims;
    std::vector<std::int64_t> sa;
    std::vector<std::int64_t> sb;
    std::int64_t n = 0;
    bool same_shape = false;
};

BcastPlan make_bcast(const char* op, const Shape& a, const Shape& b);
Shape bcast_out_shape(const BcastPlan& p);

// Walk the broadcast odometer calling f(out_linear, a_offset, b_offset).
template <class F>
void bcast_walk(const BcastPlan& p, F f) {
    if (p.same_shape) {
        for (std::int64_t o = 0; o < p.n; ++o) f(o, o, o);
        return;
    }
    const int rank = static_cast<int>(p.dims.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t o = 0; o < p.n; ++o) {
        f(o, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            oa += p.sa[d];
            ob += p.sb[d];
            if (idx[d] < p.dims[d]) break;
            idx[d] = 0;
            oa -= p.sa[d] * p.dims[d];
            ob -= p.sb[d] * p.dims[d];
        }
    }
}

// Lanes along `axis`: calls f(base_offset, stride, len) for each lane.
template <class F>
void axis_lanes(const Shape& shape, int axis, F f) {
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) inner *= shape[i];
    const std::int64_t len = shape[axis];
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            f(o * len * inner + i, inner, len);
        }
    }
}

// Bilinear corner weights for one continuous pixel location on an HxW grid.
// Clamps to the border; `overflowed` reports whether clamping moved the point.
struct BilinearCoef {
    std::int64_t x0, x1, y0, y1;
    double fx, fy;
    bool clamped_x, clamped_y;
    double w00, w01, w10, w11; // (y0,x0) (y0,x1) (y1,x0) (y1,x1)
};

BilinearCoef bilinear_coef(double u, double v, std::int64_t w, std::int64_t h);

void bump_overflow(std::uint64_t count);

int normalize_axis(const char* op, int axis, int rank);

std::vector<std::int64_t> row_strides(const Shape& s);

} // namespace lidet::detail
