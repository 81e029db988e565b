#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lidet/box.hpp"

namespace lidet {

struct ClassSpec {
    std::string name;
    double mean_l = 1.0, mean_w = 1.0, mean_h = 1.0;
    double std_l = 0.0, std_w = 0.0, std_h = 0.0;
};

struct SceneConfig {
    // xmin, ymin, zmin, xmax, ymax, zmax
    std::array<double, 6> range{-25.6, -25.6, -0.5, 25.6, 25.6, 3.5};
    std::vector<ClassSpec> classes;

    int objects_min = 2;
    int objects_max = 5;
    int points_per_object_min = 80;
    int points_per_object_max = 240;
    // Boxes with fewer supporting points than this are only allowed past
    // density_cutoff and get flagged sparse.
    int min_object_points = 20;
    double density_ref_dist = 12.0;  // 1/d^2 falloff anchor
    double density_cutoff = 18.0;
    double clutter_density = 0.25;   // ground points per square meter
    double surface_jitter = 0.02;
    double velocity_std = 1.5;
    int max_place_retries = 100;

    static SceneConfig defaults();
};

struct Scene {
    PointCloud cloud;
    std::vector<Box3D> boxes;
    std::string scene_id;
};

// Deterministic pure function of (seed, cfg). Boxes never overlap in BEV and
// object point density decays as 1/dist^2 past the reference distance.
Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

} // namespace lidet
