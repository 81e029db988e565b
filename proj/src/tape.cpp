#include "lidet/tape.hpp"

#include <cmath>
#include <cstring>

#include "lidet/kernels.hpp"
#include "ops_internal.hpp"

namespace lidet {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::Neg: return "neg";
        case Op::Scale: return "scale";
        case Op::AddScalar: return "add_scalar";
        case Op::MatMul: return "matmul";
        case Op::Conv2d: return "conv2d";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Softmax: return "softmax";
        case Op::LayerNorm: return "layer_norm";
        case Op::Gather: return "gather";
        case Op::ScatterAdd: return "scatter_add";
        case Op::SegmentMax: return "segment_max";
        case Op::Reshape: return "reshape";
        case Op::Transpose: return "transpose";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Log: return "log";
        case Op::Exp: return "exp";
        case Op::Abs: return "abs";
        case Op::Sqrt: return "sqrt";
        case Op::PowC: return "powc";
        case Op::Clamp: return "clamp";
        case Op::ReduceSum: return "reduce_sum";
        case Op::ReduceMean: return "reduce_mean";
        case Op::Bilinear: return "bilinear_sample";
        case Op::MsDeform: return "ms_deform_attn";
        case Op::Upsample2x: return "upsample2x";
    }
    return "?";
}

namespace {

thread_local Tape* t_current = nullptr;

} // namespace

Tape* current_tape() {
    return t_current;
}

TapeScope::TapeScope(Tape& tape) : prev_(t_current) {
    t_current = &tape;
}

TapeScope::~TapeScope() {
    t_current = prev_;
}

int Tape::record(Op op, std::vector<int> inputs, Shape shape,
                 std::shared_ptr<std::vector<double>> out,
                 std::vector<std::shared_ptr<std::vector<double>>> saved,
                 std::vector<Shape> in_shapes, OpAttrs attrs) {
    TapeNode node;
    node.op = op;
    node.inputs = std::move(inputs);
    node.shape = std::move(shape);
    node.out = std::move(out);
    node.saved = std::move(saved);
    node.in_shapes = std::move(in_shapes);
    node.attrs = std::move(attrs);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf_for(const Tensor& t) {
    const void* key = t.data.get();
    auto it = leaf_ids_.find(key);
    if (it != leaf_ids_.end()) return it->second;
    TapeNode node;
    node.op = Op::Leaf;
    node.shape = t.shape;
    node.out = t.data;
    nodes_.push_back(std::move(node));
    const int id = static_cast<int>(nodes_.size()) - 1;
    leaf_ids_.emplace(key, id);
    return id;
}

std::vector<double>* Tape::grad_buf(int id) {
    if (id < 0) return nullptr;
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) {
        g.assign(static_cast<std::size_t>(numel(nodes_[static_cast<std::size_t>(id)].shape)), 0.0);
    }
    return &g;
}

const std::vector<double>* Tape::grad_of_node(int node) const {
    if (node < 0 || node >= static_cast<int>(grads_.size())) return nullptr;
    const auto& g = grads_[static_cast<std::size_t>(node)];
    return g.empty() ? nullptr : &g;
}

const std::vector<double>* Tape::grad(const Tensor& t) const {
    if (t.node >= 0 && t.tape == this) return grad_of_node(t.node);
    auto it = leaf_ids_.find(t.data.get());
    if (it == leaf_ids_.end()) return nullptr;
    return grad_of_node(it->second);
}

void Tape::backward(const Tensor& root) {
    if (backward_done_) {
        throw Error("backward: tape already differentiated; rebuild the graph to differentiate again");
    }
    if (root.tape != this || root.node < 0) {
        throw Error("backward: root tensor is not recorded on this tape");
    }
    if (numel(root.shape) != 1) {
        throw Error("backward: root must be scalar, got " + shape_str(root.shape));
    }
    backward_done_ = true;
    grads_.assign(nodes_.size(), {});
    grad_buf(root.node)->front() = 1.0;
    for (int id = root.node; id >= 0; --id) {
        if (grads_[static_cast<std::size_t>(id)].empty()) continue;
        backprop_node(id);
    }
}

namespace {

using detail::axis_lanes;
using detail::bcast_walk;
using detail::make_bcast;

// Reduce an output-shaped gradient onto one broadcast input.
void bcast_accum(const Shape& out_shape, const Shape& in_shape, const double* g,
                 const double* scale_buf, std::vector<double>* dst, bool negate = false) {
    if (!dst) return;
    auto plan = make_bcast("bcast_grad", in_shape, out_shape);
    // plan maps (in, out) with in broadcast onto out's shape
    double* pd = dst->data();
    bcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        (void)ib;
        double v = g[o];
        if (scale_buf) v *= scale_buf[o];
        pd[ia] += negate ? -v : v;
    });
}

} // namespace

void Tape::backprop_node(int id) {
    TapeNode& nd = nodes_[static_cast<std::size_t>(id)];
    const std::vector<double>& g = grads_[static_cast<std::size_t>(id)];
    const double* pg = g.data();
    const std::int64_t n = static_cast<std::int64_t>(g.size());

    auto in_buf = [&](int slot) -> std::vector<double>* {
        return grad_buf(nd.inputs.empty() ? -1 : nd.inputs[static_cast<std::size_t>(slot)]);
    };
    auto saved_ptr = [&](int slot) -> const double* {
        return nd.saved[static_cast<std::size_t>(slot)]->data();
    };

    switch (nd.op) {
        case Op::Leaf:
            break;

        case Op::Add: {
            const Shape& os = nd.shape;
            if (auto* da = in_buf(0)) bcast_accum(os, nd.in_shapes[0], pg, nullptr, da);
            if (auto* db = in_buf(1)) bcast_accum(os, nd.in_shapes[1], pg, nullptr, db);
            break;
        }
        case Op::Sub: {
            const Shape& os = nd.shape;
            if (auto* da = in_buf(0)) bcast_accum(os, nd.in_shapes[0], pg, nullptr, da);
            if (auto* db = in_buf(1)) bcast_accum(os, nd.in_shapes[1], pg, nullptr, db, true);
            break;
        }
        case Op::Mul: {
            auto plan = make_bcast("mul_grad", nd.in_shapes[0], nd.in_shapes[1]);
            const double* pa = saved_ptr(0);
            const double* pb = saved_ptr(1);
            std::vector<double>* da = in_buf(0);
            std::vector<double>* db = in_buf(1);
            bcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                if (da) (*da)[static_cast<std::size_t>(ia)] += pg[o] * pb[ib];
                if (db) (*db)[static_cast<std::size_t>(ib)] += pg[o] * pa[ia];
            });
            break;
        }
        case Op::Div: {
            auto plan = make_bcast("div_grad", nd.in_shapes[0], nd.in_shapes[1]);
            const double* pa = saved_ptr(0);
            const double* pb = saved_ptr(1);
            std::vector<double>* da = in_buf(0);
            std::vector<double>* db = in_buf(1);
            bcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                const double inv = 1.0 / pb[ib];
                if (da) (*da)[static_cast<std::size_t>(ia)] += pg[o] * inv;
                if (db) (*db)[static_cast<std::size_t>(ib)] -= pg[o] * pa[ia] * inv * inv;
            });
            break;
        }
        case Op::Neg: {
            if (auto* da = in_buf(0)) {
                for (std::int64_t i = 0; i < n; ++i) (*da)[static_cast<std::size_t>(i)] -= pg[i];
            }
            break;
        }
        case Op::Scale: {
            if (auto* da = in_buf(0)) {
                const double c = nd.attrs.scalar;
                for (std::int64_t i = 0; i < n; ++i) {
                    (*da)[static_cast<std::size_t>(i)] += c * pg[i];
                }
            }
            break;
        }
        case Op::AddScalar: {
            if (auto* da = in_buf(0)) {
                for (std::int64_t i = 0; i < n; ++i) (*da)[static_cast<std::size_t>(i)] += pg[i];
            }
            break;
        }

        case Op::MatMul: {
            const std::int64_t m = nd.in_shapes[0][0];
            const std::int64_t k = nd.in_shapes[0][1];
            const std::int64_t nn = nd.in_shapes[1][1];
            if (auto* da = in_buf(0)) {
                kernels::matmul_nt(pg, saved_ptr(1), da->data(), m, nn, k, true);
            }
            if (auto* db = in_buf(1)) {
                kernels::matmul_tn(saved_ptr(0), pg, db->data(), m, k, nn, true);
            }
            break;
        }
        case Op::Conv2d: {
            kernels::Conv2dDims d;
            d.h_in = nd.in_shapes[0][0];
            d.w_in = nd.in_shapes[0][1];
            d.c_in = nd.in_shapes[0][2];
            d.kh = nd.in_shapes[1][0];
            d.kw = nd.in_shapes[1][1];
            d.c_out = nd.in_shapes[1][3];
            d.stride = nd.attrs.stride;
            d.pad = nd.attrs.pad;
            d.h_out = nd.shape[0];
            d.w_out = nd.shape[1];
            if (auto* dx = in_buf(0)) kernels::conv2d_dx(pg, saved_ptr(1), dx->data(), d);
            if (auto* dw = in_buf(1)) kernels::conv2d_dw(saved_ptr(0), pg, dw->data(), d);
            break;
        }

        case Op::Relu: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                for (std::int64_t i = 0; i < n; ++i) {
                    if (px[i] > 0.0) (*da)[static_cast<std::size_t>(i)] += pg[i];
                }
            }
            break;
        }
        case Op::Sigmoid: {
            if (auto* da = in_buf(0)) {
                const double* py = nd.out->data();
                for (std::int64_t i = 0; i < n; ++i) {
                    (*da)[static_cast<std::size_t>(i)] += pg[i] * py[i] * (1.0 - py[i]);
                }
            }
            break;
        }
        case Op::Softmax: {
            if (auto* da = in_buf(0)) {
                const double* py = nd.out->data();
                axis_lanes(nd.shape, nd.attrs.axis,
                           [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
                               double dot = 0.0;
                               for (std::int64_t j = 0; j < len; ++j) {
                                   const std::int64_t o = base + j * stride;
                                   dot += pg[o] * py[o];
                               }
                               for (std::int64_t j = 0; j < len; ++j) {
                                   const std::int64_t o = base + j * stride;
                                   (*da)[static_cast<std::size_t>(o)] += py[o] * (pg[o] - dot);
                               }
                           });
            }
            break;
        }
        case Op::LayerNorm: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                const double* py = nd.out->data();
                const double eps = nd.attrs.eps;
                axis_lanes(nd.shape, nd.attrs.axis,
                           [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
                               double mean = 0.0;
                               for (std::int64_t j = 0; j < len; ++j) {
                                   mean += px[base + j * stride];
                               }
                               mean /= static_cast<double>(len);
                               double var = 0.0;
                               for (std::int64_t j = 0; j < len; ++j) {
                                   const double dd = px[base + j * stride] - mean;
                                   var += dd * dd;
                               }
                               var /= static_cast<double>(len);
                               const double inv = 1.0 / std::sqrt(var + eps);
                               double gmean = 0.0, gdot = 0.0;
                               for (std::int64_t j = 0; j < len; ++j) {
                                   const std::int64_t o = base + j * stride;
                                   gmean += pg[o];
                                   gdot += pg[o] * py[o];
                               }
                               gmean /= static_cast<double>(len);
                               gdot /= static_cast<double>(len);
                               for (std::int64_t j = 0; j < len; ++j) {
                                   const std::int64_t o = base + j * stride;
                                   (*da)[static_cast<std::size_t>(o)] +=
                                       inv * (pg[o] - gmean - py[o] * gdot);
                               }
                           });
            }
            break;
        }

        case Op::Gather: {
            if (auto* da = in_buf(0)) {
                const auto& idx = *nd.attrs.index;
                std::int64_t width = 1;
                for (std::size_t i = 1; i < nd.in_shapes[0].size(); ++i) {
                    width *= nd.in_shapes[0][i];
                }
                for (std::size_t m = 0; m < idx.size(); ++m) {
                    const double* src = pg + static_cast<std::int64_t>(m) * width;
                    double* dst = da->data() + idx[m] * width;
                    for (std::int64_t c = 0; c < width; ++c) dst[c] += src[c];
                }
            }
            break;
        }
        case Op::ScatterAdd: {
            if (auto* da = in_buf(0)) {
                const auto& idx = *nd.attrs.index;
                std::int64_t width = 1;
                for (std::size_t i = 1; i < nd.in_shapes[0].size(); ++i) {
                    width *= nd.in_shapes[0][i];
                }
                for (std::size_t m = 0; m < idx.size(); ++m) {
                    const double* src = pg + idx[m] * width;
                    double* dst = da->data() + static_cast<std::int64_t>(m) * width;
                    for (std::int64_t c = 0; c < width; ++c) dst[c] += src[c];
                }
            }
            break;
        }
        case Op::SegmentMax: {
            if (auto* da = in_buf(0)) {
                const auto& am = *nd.attrs.argmax;
                std::int64_t width = 1;
                for (std::size_t i = 1; i < nd.in_shapes[0].size(); ++i) {
                    width *= nd.in_shapes[0][i];
                }
                for (std::int64_t s = 0; s < nd.attrs.out_rows; ++s) {
                    for (std::int64_t c = 0; c < width; ++c) {
                        const std::int64_t m = am[static_cast<std::size_t>(s * width + c)];
                        if (m >= 0) (*da)[static_cast<std::size_t>(m * width + c)] += pg[s * width + c];
                    }
                }
            }
            break;
        }

        case Op::Reshape: {
            if (auto* da = in_buf(0)) {
                for (std::int64_t i = 0; i < n; ++i) (*da)[static_cast<std::size_t>(i)] += pg[i];
            }
            break;
        }
        case Op::Transpose: {
            if (auto* da = in_buf(0)) {
                const auto& perm = nd.attrs.perm;
                const int rank = static_cast<int>(perm.size());
                const auto xst = detail::row_strides(nd.in_shapes[0]);
                std::vector<std::int64_t> ost(rank);
                for (int i = 0; i < rank; ++i) ost[i] = xst[perm[i]];
                std::vector<std::int64_t> idx(rank, 0);
                std::int64_t src = 0;
                for (std::int64_t o = 0; o < n; ++o) {
                    (*da)[static_cast<std::size_t>(src)] += pg[o];
                    for (int d = rank - 1; d >= 0; --d) {
                        ++idx[d];
                        src += ost[d];
                        if (idx[d] < nd.shape[d]) break;
                        idx[d] = 0;
                        src -= ost[d] * nd.shape[d];
                    }
                }
            }
            break;
        }
        case Op::Concat: {
            const int a = nd.attrs.axis;
            const int rank = static_cast<int>(nd.shape.size());
            std::int64_t outer = 1, inner = 1;
            for (int i = 0; i < a; ++i) outer *= nd.shape[i];
            for (int i = a + 1; i < rank; ++i) inner *= nd.shape[i];
            const std::int64_t total = nd.shape[a];
            std::int64_t col0 = 0;
            for (std::size_t s = 0; s < nd.inputs.size(); ++s) {
                const std::int64_t len = nd.in_shapes[s][a];
                if (auto* da = grad_buf(nd.inputs[s])) {
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const double* src = pg + (o * total + col0) * inner;
                        double* dst = da->data() + o * len * inner;
                        for (std::int64_t c = 0; c < len * inner; ++c) dst[c] += src[c];
                    }
                }
                col0 += len;
            }
            break;
        }
        case Op::Slice: {
            if (auto* da = in_buf(0)) {
                const int a = nd.attrs.axis;
                const int rank = static_cast<int>(nd.shape.size());
                std::int64_t outer = 1, inner = 1;
                for (int i = 0; i < a; ++i) outer *= nd.in_shapes[0][i];
                for (int i = a + 1; i < rank; ++i) inner *= nd.in_shapes[0][i];
                const std::int64_t full = nd.in_shapes[0][a];
                const std::int64_t len = nd.attrs.len;
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = pg + o * len * inner;
                    double* dst = da->data() + (o * full + nd.attrs.start) * inner;
                    for (std::int64_t c = 0; c < len * inner; ++c) dst[c] += src[c];
                }
            }
            break;
        }

        case Op::Sin: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                for (std::int64_t i = 0; i < n; ++i) {
                    (*da)[static_cast<std::size_t>(i)] += pg[i] * std::cos(px[i]);
                }
            }
            break;
        }
        case Op::Cos: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                for (std::int64_t i = 0; i < n; ++i) {
                    (*da)[static_cast<std::size_t>(i)] -= pg[i] * std::sin(px[i]);
                }
            }
            break;
        }
        case Op::Log: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                for (std::int64_t i = 0; i < n; ++i) {
                    if (px[i] > 1e-12) (*da)[static_cast<std::size_t>(i)] += pg[i] / px[i];
                }
            }
            break;
        }
        case Op::Exp: {
            if (auto* da = in_buf(0)) {
                const double* py = nd.out->data();
                for (std::int64_t i = 0; i < n; ++i) {
                    (*da)[static_cast<std::size_t>(i)] += pg[i] * py[i];
                }
            }
            break;
        }
        case Op::Abs: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                for (std::int64_t i = 0; i < n; ++i) {
                    const double s = px[i] > 0.0 ? 1.0 : (px[i] < 0.0 ? -1.0 : 0.0);
                    (*da)[static_cast<std::size_t>(i)] += pg[i] * s;
                }
            }
            break;
        }
        case Op::Sqrt: {
            if (auto* da = in_buf(0)) {
                const double* py = nd.out->data();
                for (std::int64_t i = 0; i < n; ++i) {
                    if (py[i] > 0.0) (*da)[static_cast<std::size_t>(i)] += pg[i] * 0.5 / py[i];
                }
            }
            break;
        }
        case Op::PowC: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                const double e = nd.attrs.scalar;
                for (std::int64_t i = 0; i < n; ++i) {
                    if (px[i] > 0.0) {
                        (*da)[static_cast<std::size_t>(i)] += pg[i] * e * std::pow(px[i], e - 1.0);
                    }
                }
            }
            break;
        }
        case Op::Clamp: {
            if (auto* da = in_buf(0)) {
                const double* px = saved_ptr(0);
                const double lo = nd.attrs.scalar, hi = nd.attrs.scalar2;
                for (std::int64_t i = 0; i < n; ++i) {
                    if (px[i] >= lo && px[i] <= hi) {
                        (*da)[static_cast<std::size_t>(i)] += pg[i];
                    }
                }
            }
            break;
        }

        case Op::ReduceSum: {
            if (auto* da = in_buf(0)) {
                if (nd.attrs.axis < 0) {
                    const double gv = pg[0];
                    for (auto& v : *da) v += gv;
                } else {
                    const double* pgl = pg;
                    std::int64_t lane = 0;
                    axis_lanes(nd.in_shapes[0], nd.attrs.axis,
                               [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
                                   const double gv = pgl[lane++];
                                   for (std::int64_t j = 0; j < len; ++j) {
                                       (*da)[static_cast<std::size_t>(base + j * stride)] += gv;
                                   }
                               });
                }
            }
            break;
        }
        case Op::ReduceMean: {
            if (auto* da = in_buf(0)) {
                if (nd.attrs.axis < 0) {
                    const double gv = pg[0] / static_cast<double>(da->size());
                    for (auto& v : *da) v += gv;
                } else {
                    const double* pgl = pg;
                    std::int64_t lane = 0;
                    axis_lanes(nd.in_shapes[0], nd.attrs.axis,
                               [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
                                   const double gv = pgl[lane++] / static_cast<double>(len);
                                   for (std::int64_t j = 0; j < len; ++j) {
                                       (*da)[static_cast<std::size_t>(base + j * stride)] += gv;
                                   }
                               });
                }
            }
            break;
        }

        case Op::Bilinear: {
            const std::int64_t h = nd.in_shapes[0][0];
            const std::int64_t w = nd.in_shapes[0][1];
            const std::int64_t c = nd.in_shapes[0][2];
            const std::int64_t m = nd.in_shapes[1][0];
            const double* pmv = saved_ptr(0);
            const double* pl = saved_ptr(1);
            std::vector<double>* dmap = in_buf(0);
            std::vector<double>* dloc = in_buf(1);
            for (std::int64_t i = 0; i < m; ++i) {
                const auto bc = detail::bilinear_coef(pl[i * 2], pl[i * 2 + 1], w, h);
                const std::int64_t o00 = (bc.y0 * w + bc.x0) * c;
                const std::int64_t o01 = (bc.y0 * w + bc.x1) * c;
                const std::int64_t o10 = (bc.y1 * w + bc.x0) * c;
                const std::int64_t o11 = (bc.y1 * w + bc.x1) * c;
                const double* gi = pg + i * c;
                if (dmap) {
                    double* pd = dmap->data();
                    for (std::int64_t j = 0; j < c; ++j) {
                        pd[o00 + j] += bc.w00 * gi[j];
                        pd[o01 + j] += bc.w01 * gi[j];
                        pd[o10 + j] += bc.w10 * gi[j];
                        pd[o11 + j] += bc.w11 * gi[j];
                    }
                }
                if (dloc) {
                    double du = 0.0, dv = 0.0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        const double v00 = pmv[o00 + j], v01 = pmv[o01 + j];
                        const double v10 = pmv[o10 + j], v11 = pmv[o11 + j];
                        du += gi[j] * ((1.0 - bc.fy) * (v01 - v00) + bc.fy * (v11 - v10));
                        dv += gi[j] * ((1.0 - bc.fx) * (v10 - v00) + bc.fx * (v11 - v01));
                    }
                    if (!bc.clamped_x) (*dloc)[static_cast<std::size_t>(i * 2)] += du;
                    if (!bc.clamped_y) (*dloc)[static_cast<std::size_t>(i * 2 + 1)] += dv;
                }
            }
            break;
        }

        case Op::MsDeform: {
            const auto& levels = nd.attrs.levels;
            const int heads = nd.attrs.heads;
            const std::int64_t d = nd.in_shapes[0][1];
            const std::int64_t dh = d / heads;
            const std::int64_t lq = nd.in_shapes[1][0];
            const int nlev = static_cast<int>(levels.size());
            const std::int64_t npts = nd.in_shapes[1][3];
            const double* pv = saved_ptr(0);
            const double* pl = saved_ptr(1);
            const double* pa = saved_ptr(2);
            std::vector<double>* dval = in_buf(0);
            std::vector<double>* dloc = in_buf(1);
            std::vector<double>* datt = in_buf(2);
            for (std::int64_t q = 0; q < lq; ++q) {
                for (int hh = 0; hh < heads; ++hh) {
                    const double* gd = pg + q * d + hh * dh;
                    for (int j = 0; j < nlev; ++j) {
                        const MsLevel& lv = levels[j];
                        for (std::int64_t k = 0; k < npts; ++k) {
                            const std::int64_t base = (((q * heads + hh) * nlev + j) * npts + k);
                            const double u = pl[base * 2];
                            const double v = pl[base * 2 + 1];
                            const double a = pa[base];
                            const auto bc = detail::bilinear_coef(u, v, lv.w, lv.h);
                            const std::int64_t o00 = (lv.row0 + bc.y0 * lv.w + bc.x0) * d + hh * dh;
                            const std::int64_t o01 = (lv.row0 + bc.y0 * lv.w + bc.x1) * d + hh * dh;
                            const std::int64_t o10 = (lv.row0 + bc.y1 * lv.w + bc.x0) * d + hh * dh;
                            const std::int64_t o11 = (lv.row0 + bc.y1 * lv.w + bc.x1) * d + hh * dh;
                            double sdot = 0.0, du = 0.0, dv = 0.0;
                            for (std::int64_t cc = 0; cc < dh; ++cc) {
                                const double v00 = pv[o00 + cc], v01 = pv[o01 + cc];
                                const double v10 = pv[o10 + cc], v11 = pv[o11 + cc];
                                const double samp = bc.w00 * v00 + bc.w01 * v01 + bc.w10 * v10 +
                                                    bc.w11 * v11;
                                const double gc = gd[cc];
                                sdot += gc * samp;
                                if (dval) {
                                    double* pd = dval->data();
                                    pd[o00 + cc] += a * bc.w00 * gc;
                                    pd[o01 + cc] += a * bc.w01 * gc;
                                    pd[o10 + cc] += a * bc.w10 * gc;
                                    pd[o11 + cc] += a * bc.w11 * gc;
                                }
                                du += gc * ((1.0 - bc.fy) * (v01 - v00) + bc.fy * (v11 - v10));
                                dv += gc * ((1.0 - bc.fx) * (v10 - v00) + bc.fx * (v11 - v01));
                            }
                            if (datt) (*datt)[static_cast<std::size_t>(base)] += sdot;
                            if (dloc) {
                                if (!bc.clamped_x) {
                                    (*dloc)[static_cast<std::size_t>(base * 2)] += a * du;
                                }
                                if (!bc.clamped_y) {
                                    (*dloc)[static_cast<std::size_t>(base * 2 + 1)] += a * dv;
                                }
                            }
                        }
                    }
                }
            }
            break;
        }

        case Op::Upsample2x: {
            if (auto* da = in_buf(0)) {
                const std::int64_t h = nd.in_shapes[0][0];
                const std::int64_t w = nd.in_shapes[0][1];
                const std::int64_t c = nd.in_shapes[0][2];
                for (std::int64_t y = 0; y < 2 * h; ++y) {
                    for (std::int64_t x = 0; x < 2 * w; ++x) {
                        const double* src = pg + (y * 2 * w + x) * c;
                        double* dst = da->data() + ((y / 2) * w + x / 2) * c;
                        for (std::int64_t j = 0; j < c; ++j) dst[j] += src[j];
                    }
                }
            }
            break;
        }
    }
}

} // namespace lidet
