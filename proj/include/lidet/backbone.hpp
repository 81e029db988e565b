#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "lidet/box.hpp"
#include "lidet/nn.hpp"
#include "lidet/tensor.hpp"

namespace lidet {

struct GridConfig {
    // xmin, ymin, zmin, xmax, ymax, zmax
    std::array<double, 6> range{-25.6, -25.6, -0.5, 25.6, 25.6, 3.5};
    std::array<double, 3> voxel_size{0.8, 0.8, 1.0};
    std::array<double, 2> pillar_size{0.8, 0.8};
    int pillar_max_points = 32;

    std::array<int, 3> voxel_dims() const;
    std::array<int, 2> pillar_dims() const;
    void validate() const;
};

// Occupied voxel sites in lexicographic (ix,iy,iz) order plus their feature
// rows. Features stay on the tape; the index structures are plain data.
struct VoxelGrid {
    std::vector<std::array<int, 3>> sites;
    std::unordered_map<std::int64_t, int> lookup; // packed key -> row
    Tensor features;                              // [Nv, C]
    std::vector<int> counts;                      // points per voxel
    std::array<int, 3> dims{};

    static std::int64_t pack(int ix, int iy, int iz, const std::array<int, 3>& dims);
    int find(int ix, int iy, int iz) const;
};

struct PillarGrid {
    std::vector<std::array<int, 2>> pillars; // sorted (ix,iy)
    Tensor decorated;                        // [P_total, 9]
    IndexVec pillar_of_point;
    std::vector<int> counts;
    std::array<int, 2> dims{};
};

struct FeaturePyramid {
    std::vector<Tensor> maps; // 4 levels, [H,W,C] with halving H,W

    int levels() const { return static_cast<int>(maps.size()); }
    int channels() const { return maps.empty() ? 0 : maps[0].shape[2]; }
    void validate() const;
};

// Mean-of-points voxel features; points outside the range are dropped and
// per-voxel accumulation runs in a canonical point order, so the result is
// bitwise independent of input point order.
VoxelGrid voxelize(const Tensor& points, const GridConfig& cfg);

struct SparseConvLayer {
    Tensor w; // [27, cin, cout], offset order (dx,dy,dz) lexicographic
    Tensor b; // [cout]

    static SparseConvLayer create(ParamStore& ps, const std::string& prefix, int cin, int cout,
                                  Rng& rng);
};

// Stack of 3x3x3 submanifold convolutions (+ relu); output sites = input
// sites, absent neighbors contribute zero.
VoxelGrid sparse_conv_stack(const VoxelGrid& vg, const std::vector<SparseConvLayer>& layers);

// Max-pool voxels over groups of `factor` z-bins.
VoxelGrid voxel_zpool(const VoxelGrid& vg, int factor);

// Dense [X, Y, Z'*C] map; empty voxels are zero-filled.
Tensor collapse_to_bev(const VoxelGrid& vg);

// Decorates points with (x,y,z,i, offsets to pillar mean, offsets to pillar
// center); pillars over pillar_max_points are subsampled with the given seed.
PillarGrid pillarize(const Tensor& points, const GridConfig& cfg, std::uint64_t subsample_seed);

// Shared linear + relu per point, max-pool per pillar, dense [X,Y,C] scatter.
Tensor pillar_feature_net(const PillarGrid& pg, const Linear& pfn);

struct Backbone2D {
    std::vector<Conv> down;    // stride-1 then stride-2 blocks
    std::vector<Conv> lateral; // 1x1 to the common pyramid width

    static Backbone2D create(ParamStore& ps, const std::string& prefix, int cin,
                             const std::array<int, 4>& block_channels, int fpn_channels, Rng& rng);
};

// Four-level pyramid with spatial halving and a common channel width.
FeaturePyramid second_backbone_and_fpn(const Tensor& bev, const Backbone2D& w);

} // namespace lidet
