#include "lidet/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "lidet/error.hpp"

namespace lidet {

std::array<int, 3> GridConfig::voxel_dims() const {
    std::array<int, 3> d;
    for (int a = 0; a < 3; ++a) {
        d[a] = static_cast<int>(std::floor((range[a + 3] - range[a]) / voxel_size[a] + 0.5));
    }
    return d;
}

std::array<int, 2> GridConfig::pillar_dims() const {
    std::array<int, 2> d;
    for (int a = 0; a < 2; ++a) {
        d[a] = static_cast<int>(std::floor((range[a + 3] - range[a]) / pillar_size[a] + 0.5));
    }
    return d;
}

void GridConfig::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (voxel_size[a] <= 0.0) throw ConfigError("grid: non-positive voxel size");
        if (range[a + 3] <= range[a]) throw ConfigError("grid: empty range");
    }
    if (pillar_size[0] <= 0.0 || pillar_size[1] <= 0.0) {
        throw ConfigError("grid: non-positive pillar size");
    }
    if (pillar_max_points < 1) throw ConfigError("grid: pillar_max_points must be >= 1");
}

std::int64_t VoxelGrid::pack(int ix, int iy, int iz, const std::array<int, 3>& dims) {
    return (static_cast<std::int64_t>(ix) * dims[1] + iy) * dims[2] + iz;
}

int VoxelGrid::find(int ix, int iy, int iz) const {
    if (ix < 0 || iy < 0 || iz < 0 || ix >= dims[0] || iy >= dims[1] || iz >= dims[2]) return -1;
    auto it = lookup.find(pack(ix, iy, iz, dims));
    return it == lookup.end() ? -1 : it->second;
}

namespace {

// Canonical per-cell point order: sort by coordinates so accumulation order
// (and thus the floating-point result) is independent of input order.
struct CellPoint {
    std::int64_t cell;
    std::int64_t point;
};

void sort_cell_points(std::vector<CellPoint>& cp, const double* pts) {
    std::sort(cp.begin(), cp.end(), [&](const CellPoint& a, const CellPoint& b) {
        if (a.cell != b.cell) return a.cell < b.cell;
        const double* pa = pts + a.point * 4;
        const double* pb = pts + b.point * 4;
        for (int c = 0; c < 4; ++c) {
            if (pa[c] != pb[c]) return pa[c] < pb[c];
        }
        return a.point < b.point;
    });
}

} // namespace

VoxelGrid voxelize(const Tensor& points, const GridConfig& cfg) {
    cfg.validate();
    if (points.ndim() != 2 || points.shape[1] != 4) {
        throw ShapeError("voxelize: points must be [N,4], got " + shape_str(points.shape));
    }
    VoxelGrid vg;
    vg.dims = cfg.voxel_dims();
    const double* p = points.ptr();
    const std::int64_t n = points.shape[0];

    std::vector<CellPoint> cp;
    cp.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* pt = p + i * 4;
        int idx[3];
        bool ok = true;
        for (int a = 0; a < 3 && ok; ++a) {
            const double r = (pt[a] - cfg.range[a]) / cfg.voxel_size[a];
            const int v = static_cast<int>(std::floor(r));
            if (v < 0 || v >= vg.dims[a]) ok = false; // half-open bins
            idx[a] = v;
        }
        if (!ok) continue;
        cp.push_back({VoxelGrid::pack(idx[0], idx[1], idx[2], vg.dims), i});
    }
    sort_cell_points(cp, p);

    std::vector<std::int64_t> point_order;
    std::vector<std::int64_t> voxel_of_point;
    point_order.reserve(cp.size());
    voxel_of_point.reserve(cp.size());
    for (const CellPoint& c : cp) {
        if (vg.sites.empty() || VoxelGrid::pack(vg.sites.back()[0], vg.sites.back()[1],
                                                vg.sites.back()[2], vg.dims) != c.cell) {
            const int iz = static_cast<int>(c.cell % vg.dims[2]);
            const int iy = static_cast<int>((c.cell / vg.dims[2]) % vg.dims[1]);
            const int ix = static_cast<int>(c.cell / (static_cast<std::int64_t>(vg.dims[1]) * vg.dims[2]));
            vg.lookup.emplace(c.cell, static_cast<int>(vg.sites.size()));
            vg.sites.push_back({ix, iy, iz});
            vg.counts.push_back(0);
        }
        point_order.push_back(c.point);
        voxel_of_point.push_back(static_cast<std::int64_t>(vg.sites.size()) - 1);
        ++vg.counts.back();
    }

    const int nv = static_cast<int>(vg.sites.size());
    if (nv == 0) {
        vg.features = Tensor::zeros({0, 4});
        return vg;
    }
    Tensor kept = gather_rows(points, make_index(std::move(point_order)));
    Tensor sums = scatter_add_rows(kept, make_index(std::move(voxel_of_point)), nv);
    Tensor inv_counts = Tensor::uninit({nv, 1});
    for (int i = 0; i < nv; ++i) inv_counts[i] = 1.0 / static_cast<double>(vg.counts[i]);
    vg.features = mul(sums, inv_counts);
    return vg;
}

SparseConvLayer SparseConvLayer::create(ParamStore& ps, const std::string& prefix, int cin,
                                        int cout, Rng& rng) {
    SparseConvLayer l;
    l.w = ps.add(prefix + ".w", {27, cin, cout});
    l.b = ps.add(prefix + ".b", {cout});
    const double stddev = std::sqrt(2.0 / (27.0 * cin));
    fill_normal(l.w, rng, stddev);
    return l;
}

VoxelGrid sparse_conv_stack(const VoxelGrid& vg, const std::vector<SparseConvLayer>& layers) {
    VoxelGrid out = vg;
    const int nv = static_cast<int>(vg.sites.size());
    for (const SparseConvLayer& layer : layers) {
        const int cin = layer.w.shape[1];
        if (out.features.shape[1] != cin) {
            throw ShapeError("sparse_conv_stack: layer expects " + std::to_string(cin) +
                             " channels, grid has " + shape_str(out.features.shape));
        }
        // Row nv is a zero pad for absent neighbors.
        Tensor padded = concat({out.features, Tensor::zeros({1, cin}).detached()}, 0);
        Tensor acc;
        for (int o = 0; o < 27; ++o) {
            const int dx = o / 9 - 1;
            const int dy = (o / 3) % 3 - 1;
            const int dz = o % 3 - 1;
            auto nbr = std::make_shared<std::vector<std::int64_t>>();
            nbr->reserve(static_cast<std::size_t>(nv));
            for (int s = 0; s < nv; ++s) {
                const int r = out.find(out.sites[static_cast<std::size_t>(s)][0] + dx,
                                       out.sites[static_cast<std::size_t>(s)][1] + dy,
                                       out.sites[static_cast<std::size_t>(s)][2] + dz);
                nbr->push_back(r < 0 ? nv : r);
            }
            Tensor gathered = gather_rows(padded, nbr);
            Tensor wo = reshape(slice(layer.w, 0, o, 1), {cin, layer.w.shape[2]});
            Tensor term = matmul(gathered, wo);
            acc = acc.defined() ? add(acc, term) : term;
        }
        out.features = relu(add(acc, layer.b));
    }
    return out;
}

VoxelGrid voxel_zpool(const VoxelGrid& vg, int factor) {
    if (factor < 1) throw ConfigError("voxel_zpool: factor must be >= 1");
    VoxelGrid out;
    out.dims = vg.dims;
    out.dims[2] = (vg.dims[2] + factor - 1) / factor;

    // Group source rows by pooled cell in lexicographic order.
    std::vector<std::pair<std::int64_t, int>> cells;
    cells.reserve(vg.sites.size());
    for (std::size_t s = 0; s < vg.sites.size(); ++s) {
        const auto& site = vg.sites[s];
        cells.emplace_back(VoxelGrid::pack(site[0], site[1], site[2] / factor, out.dims),
                           static_cast<int>(s));
    }
    std::sort(cells.begin(), cells.end());

    std::vector<std::int64_t> order;
    std::vector<std::int64_t> seg;
    order.reserve(cells.size());
    seg.reserve(cells.size());
    for (const auto& [cell, row] : cells) {
        if (out.sites.empty() || VoxelGrid::pack(out.sites.back()[0], out.sites.back()[1],
                                                 out.sites.back()[2], out.dims) != cell) {
            const int iz = static_cast<int>(cell % out.dims[2]);
            const int iy = static_cast<int>((cell / out.dims[2]) % out.dims[1]);
            const int ix = static_cast<int>(cell / (static_cast<std::int64_t>(out.dims[1]) * out.dims[2]));
            out.lookup.emplace(cell, static_cast<int>(out.sites.size()));
            out.sites.push_back({ix, iy, iz});
            out.counts.push_back(0);
        }
        order.push_back(row);
        seg.push_back(static_cast<std::int64_t>(out.sites.size()) - 1);
        out.counts.back() += vg.counts[static_cast<std::size_t>(row)];
    }
    const int ns = static_cast<int>(out.sites.size());
    Tensor reordered = gather_rows(vg.features, make_index(std::move(order)));
    out.features = segment_max(reordered, make_index(std::move(seg)), ns);
    return out;
}

Tensor collapse_to_bev(const VoxelGrid& vg) {
    const int x = vg.dims[0], y = vg.dims[1], z = vg.dims[2];
    const int c = vg.features.defined() && vg.features.ndim() == 2 ? vg.features.shape[1] : 0;
    if (vg.sites.empty()) {
        return Tensor::zeros({x, y, z * std::max(c, 1)});
    }
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(vg.sites.size());
    for (const auto& site : vg.sites) {
        idx->push_back((static_cast<std::int64_t>(site[0]) * y + site[1]) * z + site[2]);
    }
    Tensor dense = scatter_add_rows(vg.features, idx, x * y * z);
    return reshape(dense, {x, y, z * c});
}

PillarGrid pillarize(const Tensor& points, const GridConfig& cfg, std::uint64_t subsample_seed) {
    cfg.validate();
    if (points.ndim() != 2 || points.shape[1] != 4) {
        throw ShapeError("pillarize: points must be [N,4], got " + shape_str(points.shape));
    }
    PillarGrid pg;
    pg.dims = cfg.pillar_dims();
    const double* p = points.ptr();
    const std::int64_t n = points.shape[0];

    std::vector<CellPoint> cp;
    cp.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* pt = p + i * 4;
        int idx[2];
        bool ok = true;
        for (int a = 0; a < 2 && ok; ++a) {
            const int v = static_cast<int>(std::floor((pt[a] - cfg.range[a]) / cfg.pillar_size[a]));
            if (v < 0 || v >= pg.dims[a]) ok = false;
            idx[a] = v;
        }
        // z stays within the full configured slab
        if (ok && (pt[2] < cfg.range[2] || pt[2] >= cfg.range[5])) ok = false;
        if (!ok) continue;
        cp.push_back({static_cast<std::int64_t>(idx[0]) * pg.dims[1] + idx[1], i});
    }
    sort_cell_points(cp, p);

    // Per-pillar subsample to pillar_max_points, seeded and deterministic.
    std::vector<std::int64_t> keep;
    std::vector<std::int64_t> pillar_of;
    std::size_t i = 0;
    while (i < cp.size()) {
        std::size_t j = i;
        while (j < cp.size() && cp[j].cell == cp[i].cell) ++j;
        const std::int64_t cell = cp[i].cell;
        std::vector<std::int64_t> rows;
        rows.reserve(j - i);
        for (std::size_t k = i; k < j; ++k) rows.push_back(cp[k].point);
        if (static_cast<int>(rows.size()) > cfg.pillar_max_points) {
            Rng rng(mix_seed(subsample_seed, static_cast<std::uint64_t>(cell)));
            for (std::size_t k = rows.size(); k > 1; --k) {
                const std::size_t swap = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
                std::swap(rows[k - 1], rows[swap]);
            }
            rows.resize(static_cast<std::size_t>(cfg.pillar_max_points));
            std::sort(rows.begin(), rows.end(), [&](std::int64_t a, std::int64_t b) {
                const double* pa = p + a * 4;
                const double* pb = p + b * 4;
                for (int c = 0; c < 4; ++c) {
                    if (pa[c] != pb[c]) return pa[c] < pb[c];
                }
                return a < b;
            });
        }
        const int ix = static_cast<int>(cell / pg.dims[1]);
        const int iy = static_cast<int>(cell % pg.dims[1]);
        pg.pillars.push_back({ix, iy});
        pg.counts.push_back(static_cast<int>(rows.size()));
        for (std::int64_t r : rows) {
            keep.push_back(r);
            pillar_of.push_back(static_cast<std::int64_t>(pg.pillars.size()) - 1);
        }
        i = j;
    }

    const int np = static_cast<int>(pg.pillars.size());
    pg.pillar_of_point = make_index(std::move(pillar_of));
    if (np == 0) {
        pg.decorated = Tensor::zeros({0, 9});
        return pg;
    }

    Tensor kept = gather_rows(points, make_index(std::move(keep)));
    // per-pillar means of x,y,z
    Tensor xyz = slice(kept, 1, 0, 3);
    Tensor sums = scatter_add_rows(xyz, pg.pillar_of_point, np);
    Tensor inv = Tensor::uninit({np, 1});
    for (int s = 0; s < np; ++s) inv[s] = 1.0 / static_cast<double>(pg.counts[s]);
    Tensor means = mul(sums, inv);
    Tensor mean_per_point = gather_rows(means, pg.pillar_of_point);

    // pillar center offsets (constant per point)
    const std::int64_t total = kept.shape[0];
    Tensor centers = Tensor::uninit({static_cast<int>(total), 2});
    {
        const auto& po = *pg.pillar_of_point;
        for (std::int64_t r = 0; r < total; ++r) {
            const auto& cellxy = pg.pillars[static_cast<std::size_t>(po[r])];
            centers[r * 2] = cfg.range[0] + (cellxy[0] + 0.5) * cfg.pillar_size[0];
            centers[r * 2 + 1] = cfg.range[1] + (cellxy[1] + 0.5) * cfg.pillar_size[1];
        }
    }
    Tensor to_mean = sub(xyz, mean_per_point);
    Tensor to_center = sub(slice(kept, 1, 0, 2), centers.detached());
    pg.decorated = concat({kept, to_mean, to_center}, 1);
    return pg;
}

Tensor pillar_feature_net(const PillarGrid& pg, const Linear& pfn) {
    const int x = pg.dims[0], y = pg.dims[1];
    const int c = pfn.out_dim();
    if (pg.pillars.empty()) {
        return Tensor::zeros({x, y, c});
    }
    Tensor feats = relu(pfn.apply(pg.decorated));
    Tensor pooled = segment_max(feats, pg.pillar_of_point, static_cast<int>(pg.pillars.size()));
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(pg.pillars.size());
    for (const auto& cellxy : pg.pillars) {
        idx->push_back(static_cast<std::int64_t>(cellxy[0]) * y + cellxy[1]);
    }
    Tensor dense = scatter_add_rows(pooled, idx, x * y);
    return reshape(dense, {x, y, c});
}

void FeaturePyramid::validate() const {
    if (maps.size() != 4) {
        throw ShapeError("feature pyramid must have exactly 4 levels, got " +
                         std::to_string(maps.size()));
    }
    for (int j = 0; j < 4; ++j) {
        const Tensor& m = maps[static_cast<std::size_t>(j)];
        if (m.ndim() != 3) throw ShapeError("pyramid level must be [H,W,C]");
        if (j > 0) {
            const Tensor& prev = maps[static_cast<std::size_t>(j - 1)];
            if (prev.shape[0] != 2 * m.shape[0] || prev.shape[1] != 2 * m.shape[1] ||
                prev.shape[2] != m.shape[2]) {
                throw ShapeError("pyramid levels must halve spatially with equal channels");
            }
        }
        for (std::int64_t i = 0; i < m.size(); ++i) {
            if (!std::isfinite(m[i])) throw NumericError("pyramid contains non-finite values");
        }
    }
}

Backbone2D Backbone2D::create(ParamStore& ps, const std::string& prefix, int cin,
                              const std::array<int, 4>& block_channels, int fpn_channels,
                              Rng& rng) {
    Backbone2D bb;
    int prev = cin;
    for (int j = 0; j < 4; ++j) {
        const int stride = j == 0 ? 1 : 2;
        bb.down.push_back(Conv::create(ps, prefix + ".down" + std::to_string(j), 3, 3, prev,
                                       block_channels[static_cast<std::size_t>(j)], stride, 1,
                                       rng));
        prev = block_channels[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < 4; ++j) {
        bb.lateral.push_back(Conv::create(ps, prefix + ".lateral" + std::to_string(j), 1, 1,
                                          block_channels[static_cast<std::size_t>(j)],
                                          fpn_channels, 1, 0, rng));
    }
    return bb;
}

FeaturePyramid second_backbone_and_fpn(const Tensor& bev, const Backbone2D& w) {
    if (bev.ndim() != 3) throw ShapeError("fpn: BEV input must be [H,W,C]");
    if (bev.shape[0] % 8 != 0 || bev.shape[1] % 8 != 0) {
        throw ConfigError("fpn: BEV spatial dims " + shape_str(bev.shape) +
                          " must be divisible by 8");
    }
    std::vector<Tensor> blocks;
    Tensor cur = bev;
    for (const Conv& conv : w.down) {
        cur = relu(conv.apply(cur));
        blocks.push_back(cur);
    }
    FeaturePyramid fp;
    fp.maps.resize(4);
    Tensor top = w.lateral[3].apply(blocks[3]);
    fp.maps[3] = top;
    for (int j = 2; j >= 0; --j) {
        Tensor lat = w.lateral[static_cast<std::size_t>(j)].apply(blocks[static_cast<std::size_t>(j)]);
        top = add(lat, upsample2x(top));
        fp.maps[static_cast<std::size_t>(j)] = top;
    }
    return fp;
}

} // namespace lidet
