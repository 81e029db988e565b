#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lidet {

// Wrap an angle to the principal range (-pi, pi].
inline double wrap_angle(double a) {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    double w = std::fmod(a + kTwoPi / 2.0, kTwoPi);
    if (w <= 0.0) w += kTwoPi;
    return w - kTwoPi / 2.0;
}

// 3D box: center in meters, size strictly positive, yaw in (-pi, pi],
// BEV velocity in m/s. `sparse` marks ground-truth boxes supported by fewer
// points than the generator minimum (far-range objects).
struct Box3D {
    double cx = 0.0, cy = 0.0, cz = 0.0;
    double l = 1.0, w = 1.0, h = 1.0;
    double yaw = 0.0;
    double vx = 0.0, vy = 0.0;
    int class_id = 0;
    bool sparse = false;

    double bev_range() const { return std::hypot(cx, cy); }
    double longer_edge() const { return std::max(l, w); }
};

struct PointCloud {
    // x, y, z in meters, intensity in [0,1]; row-major N x 4.
    std::vector<double> data;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()) / 4; }
    const double* point(std::int64_t i) const { return data.data() + i * 4; }
    void push(double x, double y, double z, double intensity) {
        data.push_back(x);
        data.push_back(y);
        data.push_back(z);
        data.push_back(intensity);
    }
};

} // namespace lidet
