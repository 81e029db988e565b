#include "lidet/scene.hpp"

#include <algorithm>
#include <cmath>

#include "lidet/error.hpp"
#include "lidet/geometry.hpp"
#include "lidet/rng.hpp"

namespace lidet {

SceneConfig SceneConfig::defaults() {
    SceneConfig cfg;
    cfg.classes = {
        {"car", 4.4, 1.9, 1.6, 0.30, 0.12, 0.10},
        {"truck", 7.5, 2.6, 3.0, 0.80, 0.20, 0.25},
        {"pedestrian", 0.7, 0.7, 1.7, 0.05, 0.05, 0.10},
    };
    return cfg;
}

namespace {

bool inside_range(const SceneConfig& cfg, double x, double y, double z) {
    return x >= cfg.range[0] && x <= cfg.range[3] && y >= cfg.range[1] && y <= cfg.range[4] &&
           z >= cfg.range[2] && z <= cfg.range[5];
}

// Separation test with a small inflation margin so accepted layouts have a
// strictly positive gap (pairwise rotated IoU is exactly zero).
bool overlaps_any(const Box3D& cand, const std::vector<Box3D>& placed) {
    Box3D grown = cand;
    grown.l += 0.10;
    grown.w += 0.10;
    for (const Box3D& b : placed) {
        if (bev_intersection_area(grown, b) > 0.0) return true;
    }
    return false;
}

// Uniform point on the box surface (4 side faces + top), local frame.
void sample_surface_point(Rng& rng, const Box3D& b, double jitter, double out[3]) {
    const double a_front = b.w * b.h; // +x / -x faces
    const double a_side = b.l * b.h;  // +y / -y faces
    const double a_top = b.l * b.w;
    const double total = 2.0 * a_front + 2.0 * a_side + a_top;
    const double pick = rng.uniform(0.0, total);
    double lx, ly, lz;
    const double n = rng.normal(0.0, jitter);
    if (pick < a_front) {
        lx = b.l / 2.0 + n;
        ly = rng.uniform(-b.w / 2.0, b.w / 2.0);
        lz = rng.uniform(-b.h / 2.0, b.h / 2.0);
    } else if (pick < 2.0 * a_front) {
        lx = -b.l / 2.0 - n;
        ly = rng.uniform(-b.w / 2.0, b.w / 2.0);
        lz = rng.uniform(-b.h / 2.0, b.h / 2.0);
    } else if (pick < 2.0 * a_front + a_side) {
        lx = rng.uniform(-b.l / 2.0, b.l / 2.0);
        ly = b.w / 2.0 + n;
        lz = rng.uniform(-b.h / 2.0, b.h / 2.0);
    } else if (pick < 2.0 * (a_front + a_side)) {
        lx = rng.uniform(-b.l / 2.0, b.l / 2.0);
        ly = -b.w / 2.0 - n;
        lz = rng.uniform(-b.h / 2.0, b.h / 2.0);
    } else {
        lx = rng.uniform(-b.l / 2.0, b.l / 2.0);
        ly = rng.uniform(-b.w / 2.0, b.w / 2.0);
        lz = b.h / 2.0 + n;
    }
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    out[0] = b.cx + c * lx - s * ly;
    out[1] = b.cy + s * lx + c * ly;
    out[2] = b.cz + lz;
}

} // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    if (cfg.classes.empty()) throw ConfigError("generate_scene: class table is empty");
    Scene scene;
    scene.scene_id = "scene_" + std::to_string(seed);
    Rng rng(mix_seed(seed, 0x5ce9e5ull));

    const int n_obj = static_cast<int>(rng.uniform_int(cfg.objects_min, cfg.objects_max));

    for (int i = 0; i < n_obj; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_place_retries && !placed; ++attempt) {
            const int cls = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.classes.size()) - 1));
            const ClassSpec& spec = cfg.classes[static_cast<std::size_t>(cls)];
            Box3D b;
            b.class_id = cls;
            b.l = std::max(0.2 * spec.mean_l, rng.normal(spec.mean_l, spec.std_l));
            b.w = std::max(0.2 * spec.mean_w, rng.normal(spec.mean_w, spec.std_w));
            b.h = std::max(0.2 * spec.mean_h, rng.normal(spec.mean_h, spec.std_h));
            b.yaw = wrap_angle(rng.uniform(-3.141592653589793, 3.141592653589793));
            const double margin = 0.5 * std::hypot(b.l, b.w) + 0.2;
            const double xmin = cfg.range[0] + margin, xmax = cfg.range[3] - margin;
            const double ymin = cfg.range[1] + margin, ymax = cfg.range[4] - margin;
            if (xmin >= xmax || ymin >= ymax) continue;
            b.cx = rng.uniform(xmin, xmax);
            b.cy = rng.uniform(ymin, ymax);
            b.cz = b.h / 2.0;
            b.vx = rng.normal(0.0, cfg.velocity_std);
            b.vy = rng.normal(0.0, cfg.velocity_std);
            if (overlaps_any(b, scene.boxes)) continue;
            scene.boxes.push_back(b);
            placed = true;
        }
        if (!placed) {
            throw DataError("generate_scene: could not place object " + std::to_string(i) +
                            " without overlap (seed " + std::to_string(seed) + ")");
        }
    }

    // Object surface points; density decays with range past the anchor.
    for (Box3D& b : scene.boxes) {
        const double base =
            static_cast<double>(rng.uniform_int(cfg.points_per_object_min, cfg.points_per_object_max));
        const double dist = b.bev_range();
        const double falloff =
            dist <= cfg.density_ref_dist
                ? 1.0
                : (cfg.density_ref_dist * cfg.density_ref_dist) / (dist * dist);
        int n = static_cast<int>(base * falloff);
        if (n < cfg.min_object_points) {
            if (dist > cfg.density_cutoff) {
                b.sparse = true;
                n = std::max(n, 5);
            } else {
                n = cfg.min_object_points;
            }
        }
        const double base_intensity = rng.uniform(0.3, 0.9);
        for (int p = 0; p < n; ++p) {
            double xyz[3];
            sample_surface_point(rng, b, cfg.surface_jitter, xyz);
            if (!inside_range(cfg, xyz[0], xyz[1], xyz[2])) continue;
            double inten = base_intensity + rng.normal(0.0, 0.05);
            inten = std::min(1.0, std::max(0.0, inten));
            scene.cloud.push(xyz[0], xyz[1], xyz[2], inten);
        }
    }

    // Ground clutter on the z~0 plane.
    const double area = (cfg.range[3] - cfg.range[0]) * (cfg.range[4] - cfg.range[1]);
    const int n_clutter = static_cast<int>(cfg.clutter_density * area);
    for (int p = 0; p < n_clutter; ++p) {
        const double x = rng.uniform(cfg.range[0], cfg.range[3]);
        const double y = rng.uniform(cfg.range[1], cfg.range[4]);
        double z = rng.normal(0.0, 0.02);
        z = std::min(cfg.range[5], std::max(cfg.range[2], z));
        scene.cloud.push(x, y, z, rng.uniform(0.0, 0.4));
    }

    return scene;
}

} // namespace lidet
