#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "lidet/tape.hpp"
#include "lidet/tensor.hpp"

// Differentiable primitives. Results are recorded on the current tape when
// any input requires grad; otherwise they are plain value computations.
namespace lidet {

using IndexVec = std::shared_ptr<std::vector<std::int64_t>>;

IndexVec make_index(std::vector<std::int64_t> idx);

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
// x: [H,W,Cin], w: [KH,KW,Cin,Cout]; symmetric zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, int axis, double eps = 1e-5);

Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
// log with the argument clamped at 1e-12.
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
// x^e with constant exponent; base clamped at 0.
Tensor powc(const Tensor& x, double e);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor reduce_sum(const Tensor& x);
Tensor reduce_sum(const Tensor& x, int axis);
Tensor reduce_mean(const Tensor& x);
Tensor reduce_mean(const Tensor& x, int axis);

// View with a new shape (shares the buffer).
Tensor reshape(const Tensor& x, Shape s);
Tensor transpose(const Tensor& x, std::vector<int> perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);

// Row-indexed ops; x is treated as [rows, feature...].
Tensor gather_rows(const Tensor& x, IndexVec idx);
Tensor scatter_add_rows(const Tensor& rows, IndexVec idx, int out_rows);
// Per-segment max over rows; empty segments produce zeros. Ties resolve to
// the first occurrence.
Tensor segment_max(const Tensor& rows, IndexVec seg_ids, int n_segments);

// map: [H,W,C]; locs: [M,2] as (u,v) continuous pixel coordinates, u along W.
// Out-of-range locations clamp to the border and bump the overflow counter.
Tensor bilinear_sample(const Tensor& map, const Tensor& locs);

// Fused multi-scale deformable sampling:
//   value: [sum_j Hj*Wj, d] stacked level maps, row-major per level
//   loc:   [Lq, heads, L, K, 2] pixel coords per level
//   attn:  [Lq, heads, L, K]
// out[q, h*dh+c] = sum_{j,k} attn[q,h,j,k] * bilinear(value_j[:, h*dh+c], loc[q,h,j,k])
Tensor ms_deform_attn(const Tensor& value, const Tensor& loc, const Tensor& attn,
                      const std::vector<MsLevel>& levels, int heads);

// Nearest-neighbor 2x upsample of a [H,W,C] map.
Tensor upsample2x(const Tensor& x);

// Diagnostics: count of sample locations clamped to a map border.
std::uint64_t sample_overflow_count();
void reset_sample_overflow_count();

} // namespace lidet
