#include "lidet/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lidet/error.hpp"

namespace fs = std::filesystem;

namespace lidet {

namespace {

void put_f32_le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    out.push_back(static_cast<char>(bits & 0xff));
    out.push_back(static_cast<char>((bits >> 8) & 0xff));
    out.push_back(static_cast<char>((bits >> 16) & 0xff));
    out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float get_f32_le(const unsigned char* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

void write_cloud(const std::string& path, const PointCloud& pc) {
    std::string buf;
    buf.reserve(static_cast<std::size_t>(pc.size()) * 16);
    for (std::int64_t i = 0; i < pc.size(); ++i) {
        const double* p = pc.point(i);
        for (int c = 0; c < 4; ++c) put_f32_le(buf, static_cast<float>(p[c]));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_cloud: cannot open " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write_cloud: short write to " + path);
}

PointCloud read_cloud(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_cloud: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() % 16 != 0) {
        throw DataError("read_cloud: " + path + " length " + std::to_string(buf.size()) +
                        " is not a multiple of 16 bytes");
    }
    PointCloud pc;
    pc.data.reserve(buf.size() / 4);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
    for (std::size_t i = 0; i < buf.size(); i += 4) {
        const float v = get_f32_le(p + i);
        if (!std::isfinite(v)) {
            throw DataError("read_cloud: non-finite value in " + path);
        }
        pc.data.push_back(static_cast<double>(v));
    }
    return pc;
}

void write_labels(const std::string& path, const std::vector<Box3D>& boxes,
                  const std::vector<std::string>& class_names) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_labels: cannot open " + path);
    f << "class cx cy cz l w h yaw vx vy sparse\n";
    for (const Box3D& b : boxes) {
        if (b.class_id < 0 || b.class_id >= static_cast<int>(class_names.size())) {
            throw DataError("write_labels: class id " + std::to_string(b.class_id) +
                            " outside class table");
        }
        f << class_names[static_cast<std::size_t>(b.class_id)] << ' ' << fmt9(b.cx) << ' '
          << fmt9(b.cy) << ' ' << fmt9(b.cz) << ' ' << fmt9(b.l) << ' ' << fmt9(b.w) << ' '
          << fmt9(b.h) << ' ' << fmt9(b.yaw) << ' ' << fmt9(b.vx) << ' ' << fmt9(b.vy) << ' '
          << (b.sparse ? 1 : 0) << '\n';
    }
    if (!f) throw DataError("write_labels: short write to " + path);
}

std::vector<Box3D> read_labels(const std::string& path,
                               const std::vector<std::string>& class_names) {
    std::ifstream f(path);
    if (!f) throw DataError("read_labels: cannot open " + path);
    std::string header;
    if (!std::getline(f, header)) {
        throw DataError("read_labels: " + path + " is missing the header line");
    }
    std::vector<Box3D> boxes;
    std::string line;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string cls;
        Box3D b;
        int sparse = 0;
        if (!(is >> cls >> b.cx >> b.cy >> b.cz >> b.l >> b.w >> b.h >> b.yaw >> b.vx >> b.vy)) {
            throw DataError("read_labels: " + path + ":" + std::to_string(line_no) +
                            ": missing field");
        }
        is >> sparse; // optional trailing column
        b.sparse = sparse != 0;
        b.yaw = wrap_angle(b.yaw);
        auto it = std::find(class_names.begin(), class_names.end(), cls);
        if (it == class_names.end()) {
            throw DataError("read_labels: " + path + ":" + std::to_string(line_no) +
                            ": unknown class '" + cls + "'");
        }
        b.class_id = static_cast<int>(it - class_names.begin());
        if (b.l <= 0.0 || b.w <= 0.0 || b.h <= 0.0) {
            throw DataError("read_labels: " + path + ":" + std::to_string(line_no) +
                            ": non-positive box size");
        }
        boxes.push_back(b);
    }
    return boxes;
}

std::string DatasetManifest::cloud_path(std::size_t i) const {
    return (fs::path(root) / entries[i].first).string();
}

std::string DatasetManifest::label_path(std::size_t i) const {
    return (fs::path(root) / entries[i].second).string();
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_manifest: cannot open " + path);
    f << "split " << m.split << '\n';
    f << "seed " << m.seed << '\n';
    f << "classes";
    for (const auto& c : m.classes) f << ' ' << c;
    f << '\n';
    f << "range";
    for (double v : m.range) f << ' ' << fmt9(v);
    f << '\n';
    f << "count " << m.entries.size() << '\n';
    for (const auto& [cloud, label] : m.entries) {
        f << "entry " << cloud << ' ' << label << '\n';
    }
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_manifest: cannot open " + path);
    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    if (m.root.empty()) m.root = ".";
    std::string key;
    std::size_t count = 0;
    while (f >> key) {
        if (key == "split") {
            f >> m.split;
        } else if (key == "seed") {
            f >> m.seed;
        } else if (key == "classes") {
            std::string rest;
            std::getline(f, rest);
            std::istringstream is(rest);
            std::string c;
            while (is >> c) m.classes.push_back(c);
        } else if (key == "range") {
            for (double& v : m.range) f >> v;
        } else if (key == "count") {
            f >> count;
        } else if (key == "entry") {
            std::string cloud, label;
            if (!(f >> cloud >> label)) {
                throw DataError("read_manifest: malformed entry in " + path);
            }
            m.entries.emplace_back(cloud, label);
        } else {
            throw DataError("read_manifest: unknown key '" + key + "' in " + path);
        }
    }
    if (m.entries.size() != count) {
        throw DataError("read_manifest: " + path + " lists " + std::to_string(m.entries.size()) +
                        " entries, header says " + std::to_string(count));
    }
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        if (!fs::exists(m.cloud_path(i))) {
            throw DataError("read_manifest: missing cloud file " + m.cloud_path(i));
        }
        if (!fs::exists(m.label_path(i))) {
            throw DataError("read_manifest: missing label file " + m.label_path(i));
        }
    }
    return m;
}

std::string manifest_path(const std::string& root, const std::string& split) {
    return (fs::path(root) / ("manifest_" + split + ".txt")).string();
}

} // namespace lidet
