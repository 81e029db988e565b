#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lidet/box.hpp"
#include "lidet/error.hpp"

namespace lidet {

// Raw little-endian float32 x4 per point (KITTI-style .bin layout).
void write_cloud(const std::string& path, const PointCloud& pc);
PointCloud read_cloud(const std::string& path);

// Structured text labels, one box per record. Columns: class cx cy cz l w h
// yaw vx vy sparse; values at 9 significant digits; yaw re-wrapped on read.
void write_labels(const std::string& path, const std::vector<Box3D>& boxes,
                  const std::vector<std::string>& class_names);
std::vector<Box3D> read_labels(const std::string& path,
                               const std::vector<std::string>& class_names);

struct DatasetManifest {
    std::string root; // directory the entry paths are relative to
    std::string split;
    std::uint64_t seed = 0;
    std::vector<std::string> classes;
    std::array<double, 6> range{};
    std::vector<std::pair<std::string, std::string>> entries; // (cloud, labels)

    std::string cloud_path(std::size_t i) const;
    std::string label_path(std::size_t i) const;
};

void write_manifest(const std::string& path, const DatasetManifest& m);
// Loads and validates that every referenced file exists.
DatasetManifest read_manifest(const std::string& path);

std::string manifest_path(const std::string& root, const std::string& split);

} // namespace lidet
