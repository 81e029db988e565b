#include "lidet/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#include "lidet/kernels.hpp"
#include "ops_internal.hpp"

namespace lidet {

namespace detail {

std::atomic<std::uint64_t> g_overflow{0};

void bump_overflow(std::uint64_t count) {
    if (count) g_overflow.fetch_add(count, std::memory_order_relaxed);
}

BcastPlan make_bcast(const char* op, const Shape& a, const Shape& b) {
    BcastPlan p;
    if (a == b) {
        p.same_shape = true;
        p.n = numel(a);
        p.dims.assign(a.begin(), a.end());
        return p;
    }
    const int rank = std::max(a.size(), b.size());
    p.dims.assign(rank, 1);
    std::vector<std::int64_t> da(rank, 1), db(rank, 1);
    for (int i = 0; i < rank; ++i) {
        const int ia = static_cast<int>(a.size()) - rank + i;
        const int ib = static_cast<int>(b.size()) - rank + i;
        const std::int64_t va = ia >= 0 ? a[ia] : 1;
        const std::int64_t vb = ib >= 0 ? b[ib] : 1;
        if (va != vb && va != 1 && vb != 1) {
            throw ShapeError(std::string(op) + ": shapes not broadcastable " + shape_str(a) +
                             " vs " + shape_str(b));
        }
        da[i] = va;
        db[i] = vb;
        p.dims[i] = std::max(va, vb);
    }
    p.sa.assign(rank, 0);
    p.sb.assign(rank, 0);
    std::int64_t st = 1;
    for (int i = rank - 1; i >= 0; --i) {
        p.sa[i] = (da[i] == 1) ? 0 : st;
        st *= da[i];
    }
    st = 1;
    for (int i = rank - 1; i >= 0; --i) {
        p.sb[i] = (db[i] == 1) ? 0 : st;
        st *= db[i];
    }
    p.n = 1;
    for (auto d : p.dims) p.n *= d;
    return p;
}

Shape bcast_out_shape(const BcastPlan& p) {
    Shape s;
    s.reserve(p.dims.size());
    for (auto d : p.dims) s.push_back(static_cast<int>(d));
    return s;
}

BilinearCoef bilinear_coef(double u, double v, std::int64_t w, std::int64_t h) {
    BilinearCoef c;
    const double maxu = static_cast<double>(w - 1);
    const double maxv = static_cast<double>(h - 1);
    c.clamped_x = (u < 0.0 || u > maxu);
    c.clamped_y = (v < 0.0 || v > maxv);
    const double cu = std::min(std::max(u, 0.0), maxu);
    const double cv = std::min(std::max(v, 0.0), maxv);
    c.x0 = std::min(static_cast<std::int64_t>(std::floor(cu)), w > 1 ? w - 2 : 0);
    c.y0 = std::min(static_cast<std::int64_t>(std::floor(cv)), h > 1 ? h - 2 : 0);
    c.x1 = w > 1 ? c.x0 + 1 : c.x0;
    c.y1 = h > 1 ? c.y0 + 1 : c.y0;
    c.fx = w > 1 ? cu - static_cast<double>(c.x0) : 0.0;
    c.fy = h > 1 ? cv - static_cast<double>(c.y0) : 0.0;
    c.w00 = (1.0 - c.fy) * (1.0 - c.fx);
    c.w01 = (1.0 - c.fy) * c.fx;
    c.w10 = c.fy * (1.0 - c.fx);
    c.w11 = c.fy * c.fx;
    return c;
}

int normalize_axis(const char* op, int axis, int rank) {
    int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
    }
    return a;
}

std::vector<std::int64_t> row_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
        st[i] = st[i + 1] * s[i + 1];
    }
    return st;
}

namespace {

// Tape hookup for one op invocation.
struct Recorder {
    Tape* tape = nullptr;
    bool active = false;
    std::vector<int> ids;
    std::vector<std::shared_ptr<std::vector<double>>> saved;
    std::vector<Shape> in_shapes;

    explicit Recorder(std::initializer_list<const Tensor*> ins) {
        tape = current_tape();
        if (!tape) return;
        for (const Tensor* t : ins) {
            if (t->requires_grad || (t->node >= 0 && t->tape == tape)) {
                active = true;
                break;
            }
        }
        if (!active) return;
        ids.reserve(ins.size());
        for (const Tensor* t : ins) {
            int id = -1;
            if (t->node >= 0 && t->tape == tape) {
                id = t->node;
            } else if (t->requires_grad) {
                id = tape->leaf_for(*t);
            }
            ids.push_back(id);
            saved.push_back(t->data);
            in_shapes.push_back(t->shape);
        }
    }

    void commit(Op op, Tensor& out, OpAttrs attrs = {}) {
        if (!active) return;
        out.node = tape->record(op, std::move(ids), out.shape, out.data, std::move(saved),
                                std::move(in_shapes), std::move(attrs));
        out.tape = tape;
        out.requires_grad = true;
    }
};

} // namespace
} // namespace detail

using detail::Recorder;

IndexVec make_index(std::vector<std::int64_t> idx) {
    return std::make_shared<std::vector<std::int64_t>>(std::move(idx));
}

std::uint64_t sample_overflow_count() {
    return detail::g_overflow.load(std::memory_order_relaxed);
}

void reset_sample_overflow_count() {
    detail::g_overflow.store(0, std::memory_order_relaxed);
}

// ----------------------------------------------------------- elementwise --

namespace {

template <class F>
Tensor binary_op(const char* name, Op op, const Tensor& a, const Tensor& b, F f) {
    auto plan = detail::make_bcast(name, a.shape, b.shape);
    Tensor out = Tensor::uninit(detail::bcast_out_shape(plan));
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* po = out.ptr();
    detail::bcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        po[o] = f(pa[ia], pb[ib]);
    });
    Recorder rec{&a, &b};
    rec.commit(op, out);
    return out;
}

template <class F>
Tensor unary_op(Op op, const Tensor& x, F f, OpAttrs attrs = {}) {
    Tensor out = Tensor::uninit(x.shape);
    const double* px = x.ptr();
    double* po = out.ptr();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(px[i]);
    Recorder rec{&x};
    rec.commit(op, out, std::move(attrs));
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", Op::Add, a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", Op::Sub, a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", Op::Mul, a, b, [](double x, double y) { return x * y; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    return binary_op("div", Op::Div, a, b, [](double x, double y) { return x / y; });
}

Tensor neg(const Tensor& x) {
    return unary_op(Op::Neg, x, [](double v) { return -v; });
}

Tensor scale(const Tensor& x, double c) {
    OpAttrs at;
    at.scalar = c;
    return unary_op(Op::Scale, x, [c](double v) { return c * v; }, std::move(at));
}

Tensor add_scalar(const Tensor& x, double c) {
    OpAttrs at;
    at.scalar = c;
    return unary_op(Op::AddScalar, x, [c](double v) { return v + c; }, std::move(at));
}

Tensor relu(const Tensor& x) {
    return unary_op(Op::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(Op::Sigmoid, x, [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
}

Tensor sin(const Tensor& x) {
    return unary_op(Op::Sin, x, [](double v) { return std::sin(v); });
}

Tensor cos(const Tensor& x) {
    return unary_op(Op::Cos, x, [](double v) { return std::cos(v); });
}

Tensor log(const Tensor& x) {
    return unary_op(Op::Log, x, [](double v) { return std::log(std::max(v, 1e-12)); });
}

Tensor exp(const Tensor& x) {
    return unary_op(Op::Exp, x, [](double v) { return std::exp(v); });
}

Tensor abs(const Tensor& x) {
    return unary_op(Op::Abs, x, [](double v) { return std::fabs(v); });
}

Tensor sqrt(const Tensor& x) {
    return unary_op(Op::Sqrt, x, [](double v) { return std::sqrt(std::max(v, 0.0)); });
}

Tensor powc(const Tensor& x, double e) {
    OpAttrs at;
    at.scalar = e;
    return unary_op(Op::PowC, x, [e](double v) { return std::pow(std::max(v, 0.0), e); },
                    std::move(at));
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw ShapeError("clamp: lo > hi");
    OpAttrs at;
    at.scalar = lo;
    at.scalar2 = hi;
    return unary_op(Op::Clamp, x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
                    std::move(at));
}

// ---------------------------------------------------------------- linalg --

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
    const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::uninit({static_cast<int>(m), static_cast<int>(n)});
    kernels::matmul_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
    Recorder rec{&a, &b};
    rec.commit(Op::MatMul, out);
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4 || x.shape[2] != w.shape[2]) {
        throw ShapeError("conv2d: incompatible shapes " + shape_str(x.shape) + " vs " +
                         shape_str(w.shape));
    }
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    kernels::Conv2dDims d;
    d.h_in = x.shape[0];
    d.w_in = x.shape[1];
    d.c_in = x.shape[2];
    d.kh = w.shape[0];
    d.kw = w.shape[1];
    d.c_out = w.shape[3];
    d.stride = stride;
    d.pad = pad;
    d.h_out = (d.h_in + 2 * pad - d.kh) / stride + 1;
    d.w_out = (d.w_in + 2 * pad - d.kw) / stride + 1;
    if (d.h_out < 1 || d.w_out < 1) {
        throw ShapeError("conv2d: kernel " + shape_str(w.shape) + " larger than padded input " +
                         shape_str(x.shape));
    }
    Tensor out = Tensor::uninit(
        {static_cast<int>(d.h_out), static_cast<int>(d.w_out), static_cast<int>(d.c_out)});
    kernels::conv2d_fwd(x.ptr(), w.ptr(), out.ptr(), d);
    OpAttrs at;
    at.stride = stride;
    at.pad = pad;
    Recorder rec{&x, &w};
    rec.commit(Op::Conv2d, out, std::move(at));
    return out;
}

// ------------------------------------------------------------ reductions --

Tensor softmax(const Tensor& x, int axis) {
    const int a = detail::normalize_axis("softmax", axis, x.ndim());
    Tensor out = Tensor::uninit(x.shape);
    const double* px = x.ptr();
    double* po = out.ptr();
    detail::axis_lanes(x.shape, a, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
        double mx = -1e300;
        for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, px[base + j * stride]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < len; ++j) {
            const double e = std::exp(px[base + j * stride] - mx);
            po[base + j * stride] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j < len; ++j) po[base + j * stride] *= inv;
    });
    OpAttrs at;
    at.axis = a;
    Recorder rec{&x};
    rec.commit(Op::Softmax, out, std::move(at));
    return out;
}

Tensor layer_norm(const Tensor& x, int axis, double eps) {
    const int a = detail::normalize_axis("layer_norm", axis, x.ndim());
    Tensor out = Tensor::uninit(x.shape);
    const double* px = x.ptr();
    double* po = out.ptr();
    detail::axis_lanes(x.shape, a, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
        double mean = 0.0;
        for (std::int64_t j = 0; j < len; ++j) mean += px[base + j * stride];
        mean /= static_cast<double>(len);
        double var = 0.0;
        for (std::int64_t j = 0; j < len; ++j) {
            const double d = px[base + j * stride] - mean;
            var += d * d;
        }
        var /= static_cast<double>(len);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < len; ++j) {
            po[base + j * stride] = (px[base + j * stride] - mean) * inv;
        }
    });
    OpAttrs at;
    at.axis = a;
    at.eps = eps;
    Recorder rec{&x};
    rec.commit(Op::LayerNorm, out, std::move(at));
    return out;
}

Tensor reduce_sum(const Tensor& x) {
    double s = 0.0;
    const double* px = x.ptr();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) s += px[i];
    Tensor out = Tensor::from({1}, {s});
    OpAttrs at;
    at.axis = -1;
    Recorder rec{&x};
    rec.commit(Op::ReduceSum, out, std::move(at));
    return out;
}

Tensor reduce_mean(const Tensor& x) {
    double s = 0.0;
    const double* px = x.ptr();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) s += px[i];
    Tensor m = Tensor::from({1}, {s / static_cast<double>(n == 0 ? 1 : n)});
    OpAttrs at;
    at.axis = -1;
    Recorder rec{&x};
    rec.commit(Op::ReduceMean, m, std::move(at));
    return m;
}

namespace {

Shape drop_axis(const Shape& s, int axis) {
    Shape out;
    for (int i = 0; i < static_cast<int>(s.size()); ++i) {
        if (i != axis) out.push_back(s[i]);
    }
    if (out.empty()) out.push_back(1);
    return out;
}

} // namespace

Tensor reduce_sum(const Tensor& x, int axis) {
    const int a = detail::normalize_axis("reduce_sum", axis, x.ndim());
    Tensor out = Tensor::zeros(drop_axis(x.shape, a));
    const double* px = x.ptr();
    double* po = out.ptr();
    std::int64_t lane = 0;
    detail::axis_lanes(x.shape, a, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
        double s = 0.0;
        for (std::int64_t j = 0; j < len; ++j) s += px[base + j * stride];
        po[lane++] = s;
    });
    OpAttrs at;
    at.axis = a;
    Recorder rec{&x};
    rec.commit(Op::ReduceSum, out, std::move(at));
    return out;
}

Tensor reduce_mean(const Tensor& x, int axis) {
    const int a = detail::normalize_axis("reduce_mean", axis, x.ndim());
    Tensor out = Tensor::zeros(drop_axis(x.shape, a));
    const double* px = x.ptr();
    double* po = out.ptr();
    std::int64_t lane = 0;
    detail::axis_lanes(x.shape, a, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
        double s = 0.0;
        for (std::int64_t j = 0; j < len; ++j) s += px[base + j * stride];
        po[lane++] = s / static_cast<double>(len);
    });
    OpAttrs at;
    at.axis = a;
    Recorder rec{&x};
    rec.commit(Op::ReduceMean, out, std::move(at));
    return out;
}

// ----------------------------------------------------------------- shape --

Tensor reshape(const Tensor& x, Shape s) {
    if (numel(s) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(s));
    }
    Tensor out;
    out.shape = std::move(s);
    out.data = x.data; // view
    Recorder rec{&x};
    rec.commit(Op::Reshape, out);
    return out;
}

Tensor transpose(const Tensor& x, std::vector<int> perm) {
    const int rank = x.ndim();
    if (static_cast<int>(perm.size()) != rank) {
        throw ShapeError("transpose: perm rank mismatch for " + shape_str(x.shape));
    }
    Shape os(rank);
    for (int i = 0; i < rank; ++i) os[i] = x.shape[perm[i]];
    Tensor out = Tensor::uninit(os);
    const auto xst = detail::row_strides(x.shape);
    std::vector<std::int64_t> ost(rank);
    for (int i = 0; i < rank; ++i) ost[i] = xst[perm[i]];
    const double* px = x.ptr();
    double* po = out.ptr();
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t src = 0;
    const std::int64_t n = x.size();
    for (std::int64_t o = 0; o < n; ++o) {
        po[o] = px[src];
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            src += ost[d];
            if (idx[d] < os[d]) break;
            idx[d] = 0;
            src -= ost[d] * os[d];
        }
    }
    OpAttrs at;
    at.perm = std::move(perm);
    Recorder rec{&x};
    rec.commit(Op::Transpose, out, std::move(at));
    return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const int rank = xs[0].ndim();
    const int a = detail::normalize_axis("concat", axis, rank);
    Shape os = xs[0].shape;
    int total = 0;
    for (const Tensor& t : xs) {
        if (t.ndim() != rank) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < rank; ++i) {
            if (i != a && t.shape[i] != os[i]) {
                throw ShapeError("concat: shape mismatch " + shape_str(t.shape) + " vs " +
                                 shape_str(os));
            }
        }
        total += t.shape[a];
    }
    os[a] = total;
    Tensor out = Tensor::uninit(os);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= os[i];
    for (int i = a + 1; i < rank; ++i) inner *= os[i];
    double* po = out.ptr();
    std::int64_t col0 = 0;
    for (const Tensor& t : xs) {
        const std::int64_t len = t.shape[a];
        const double* pt = t.ptr();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::memcpy(po + (o * total + col0) * inner, pt + o * len * inner,
                        static_cast<std::size_t>(len * inner) * sizeof(double));
        }
        col0 += len;
    }
    // Variable input count: record manually instead of via Recorder.
    Tape* tape = current_tape();
    bool need = false;
    if (tape) {
        for (const Tensor& t : xs) {
            if (t.requires_grad || (t.node >= 0 && t.tape == tape)) {
                need = true;
                break;
            }
        }
    }
    if (need) {
        std::vector<int> ids;
        std::vector<std::shared_ptr<std::vector<double>>> saved;
        std::vector<Shape> shapes;
        for (const Tensor& t : xs) {
            int id = -1;
            if (t.node >= 0 && t.tape == tape) {
                id = t.node;
            } else if (t.requires_grad) {
                id = tape->leaf_for(t);
            }
            ids.push_back(id);
            saved.push_back(t.data);
            shapes.push_back(t.shape);
        }
        OpAttrs at;
        at.axis = a;
        out.node = tape->record(Op::Concat, std::move(ids), out.shape, out.data, std::move(saved),
                                std::move(shapes), std::move(at));
        out.tape = tape;
        out.requires_grad = true;
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const int a = detail::normalize_axis("slice", axis, x.ndim());
    if (start < 0 || len < 0 || start + len > x.shape[a]) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape));
    }
    Shape os = x.shape;
    os[a] = len;
    Tensor out = Tensor::uninit(os);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= x.shape[i];
    for (int i = a + 1; i < x.ndim(); ++i) inner *= x.shape[i];
    const std::int64_t full = x.shape[a];
    const double* px = x.ptr();
    double* po = out.ptr();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(po + o * len * inner, px + (o * full + start) * inner,
                    static_cast<std::size_t>(len * inner) * sizeof(double));
    }
    OpAttrs at;
    at.axis = a;
    at.start = start;
    at.len = len;
    Recorder rec{&x};
    rec.commit(Op::Slice, out, std::move(at));
    return out;
}

// ------------------------------------------------------------- row index --

namespace {

std::int64_t feature_width(const Shape& s) {
    std::int64_t w = 1;
    for (std::size_t i = 1; i < s.size(); ++i) w *= s[i];
    return w;
}

} // namespace

Tensor gather_rows(const Tensor& x, IndexVec idx) {
    if (x.ndim() < 1) throw ShapeError("gather_rows: rank-0 input");
    const std::int64_t rows = x.shape[0];
    const std::int64_t width = feature_width(x.shape);
    Shape os = x.shape;
    os[0] = static_cast<int>(idx->size());
    Tensor out = Tensor::uninit(os);
    const double* px = x.ptr();
    double* po = out.ptr();
    for (std::size_t m = 0; m < idx->size(); ++m) {
        const std::int64_t r = (*idx)[m];
        if (r < 0 || r >= rows) {
            throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range [0," +
                             std::to_string(rows) + ")");
        }
        std::memcpy(po + static_cast<std::int64_t>(m) * width, px + r * width,
                    static_cast<std::size_t>(width) * sizeof(double));
    }
    OpAttrs at;
    at.index = std::move(idx);
    Recorder rec{&x};
    rec.commit(Op::Gather, out, std::move(at));
    return out;
}

Tensor scatter_add_rows(const Tensor& rows, IndexVec idx, int out_rows) {
    if (rows.ndim() < 1 || static_cast<std::int64_t>(idx->size()) != rows.shape[0]) {
        throw ShapeError("scatter_add_rows: index count " + std::to_string(idx->size()) +
                         " vs rows " + shape_str(rows.shape));
    }
    const std::int64_t width = feature_width(rows.shape);
    Shape os = rows.shape;
    os[0] = out_rows;
    Tensor out = Tensor::zeros(os);
    const double* pr = rows.ptr();
    double* po = out.ptr();
    for (std::size_t m = 0; m < idx->size(); ++m) {
        const std::int64_t r = (*idx)[m];
        if (r < 0 || r >= out_rows) {
            throw ShapeError("scatter_add_rows: index " + std::to_string(r) +
                             " out of range [0," + std::to_string(out_rows) + ")");
        }
        const double* src = pr + static_cast<std::int64_t>(m) * width;
        double* dst = po + r * width;
        for (std::int64_t c = 0; c < width; ++c) dst[c] += src[c];
    }
    OpAttrs at;
    at.index = std::move(idx);
    at.out_rows = out_rows;
    Recorder rec{&rows};
    rec.commit(Op::ScatterAdd, out, std::move(at));
    return out;
}

Tensor segment_max(const Tensor& rows, IndexVec seg_ids, int n_segments) {
    if (rows.ndim() < 1 || static_cast<std::int64_t>(seg_ids->size()) != rows.shape[0]) {
        throw ShapeError("segment_max: segment id count " + std::to_string(seg_ids->size()) +
                         " vs rows " + shape_str(rows.shape));
    }
    const std::int64_t width = feature_width(rows.shape);
    Shape os = rows.shape;
    os[0] = n_segments;
    Tensor out = Tensor::zeros(os);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(n_segments * width), -1);
    const double* pr = rows.ptr();
    double* po = out.ptr();
    for (std::size_t m = 0; m < seg_ids->size(); ++m) {
        const std::int64_t s = (*seg_ids)[m];
        if (s < 0 || s >= n_segments) {
            throw ShapeError("segment_max: segment id " + std::to_string(s) + " out of range");
        }
        const double* src = pr + static_cast<std::int64_t>(m) * width;
        double* dst = po + s * width;
        std::int64_t* am = argmax->data() + s * width;
        for (std::int64_t c = 0; c < width; ++c) {
            if (am[c] < 0 || src[c] > dst[c]) {
                dst[c] = src[c];
                am[c] = static_cast<std::int64_t>(m);
            }
        }
    }
    OpAttrs at;
    at.index = std::move(seg_ids);
    at.out_rows = n_segments;
    at.argmax = std::move(argmax);
    Recorder rec{&rows};
    rec.commit(Op::SegmentMax, out, std::move(at));
    return out;
}

// -------------------------------------------------------------- sampling --

Tensor bilinear_sample(const Tensor& map, const Tensor& locs) {
    if (map.ndim() != 3 || locs.ndim() != 2 || locs.shape[1] != 2) {
        throw ShapeError("bilinear_sample: want map [H,W,C] and locs [M,2], got " +
                         shape_str(map.shape) + " and " + shape_str(locs.shape));
    }
    const std::int64_t h = map.shape[0], w = map.shape[1], c = map.shape[2];
    const std::int64_t m = locs.shape[0];
    Tensor out = Tensor::uninit({static_cast<int>(m), static_cast<int>(c)});
    const double* pm = map.ptr();
    const double* pl = locs.ptr();
    double* po = out.ptr();
    std::uint64_t overflow = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        const auto bc = detail::bilinear_coef(pl[i * 2], pl[i * 2 + 1], w, h);
        if (bc.clamped_x || bc.clamped_y) ++overflow;
        const double* r00 = pm + (bc.y0 * w + bc.x0) * c;
        const double* r01 = pm + (bc.y0 * w + bc.x1) * c;
        const double* r10 = pm + (bc.y1 * w + bc.x0) * c;
        const double* r11 = pm + (bc.y1 * w + bc.x1) * c;
        double* dst = po + i * c;
        for (std::int64_t j = 0; j < c; ++j) {
            dst[j] = bc.w00 * r00[j] + bc.w01 * r01[j] + bc.w10 * r10[j] + bc.w11 * r11[j];
        }
    }
    detail::bump_overflow(overflow);
    Recorder rec{&map, &locs};
    rec.commit(Op::Bilinear, out);
    return out;
}

Tensor ms_deform_attn(const Tensor& value, const Tensor& loc, const Tensor& attn,
                      const std::vector<MsLevel>& levels, int heads) {
    if (value.ndim() != 2) throw ShapeError("ms_deform_attn: value must be [rows,d]");
    const std::int64_t d = value.shape[1];
    if (heads <= 0 || d % heads != 0) {
        throw ShapeError("ms_deform_attn: model dim " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
    }
    const int nlev = static_cast<int>(levels.size());
    if (loc.ndim() != 5 || loc.shape[1] != heads || loc.shape[2] != nlev || loc.shape[4] != 2 ||
        attn.ndim() != 4 || attn.shape[0] != loc.shape[0] || attn.shape[1] != heads ||
        attn.shape[2] != nlev || attn.shape[3] != loc.shape[3]) {
        throw ShapeError("ms_deform_attn: loc " + shape_str(loc.shape) + " / attn " +
                         shape_str(attn.shape) + " mismatch");
    }
    std::int64_t rows = 0;
    for (const auto& lv : levels) rows += static_cast<std::int64_t>(lv.h) * lv.w;
    if (rows != value.shape[0]) {
        throw ShapeError("ms_deform_attn: level table rows " + std::to_string(rows) +
                         " vs value rows " + std::to_string(value.shape[0]));
    }
    const std::int64_t lq = loc.shape[0];
    const std::int64_t npts = loc.shape[3];
    const std::int64_t dh = d / heads;
    Tensor out = Tensor::zeros({static_cast<int>(lq), static_cast<int>(d)});
    const double* pv = value.ptr();
    const double* pl = loc.ptr();
    const double* pa = attn.ptr();
    double* po = out.ptr();
    std::uint64_t overflow = 0;

    for (std::int64_t q = 0; q < lq; ++q) {
        for (int hh = 0; hh < heads; ++hh) {
            double* dst = po + q * d + hh * dh;
            for (int j = 0; j < nlev; ++j) {
                const MsLevel& lv = levels[j];
                for (std::int64_t k = 0; k < npts; ++k) {
                    const std::int64_t base = (((q * heads + hh) * nlev + j) * npts + k);
                    const double u = pl[base * 2];
                    const double v = pl[base * 2 + 1];
                    const double a = pa[base];
                    const auto bc = detail::bilinear_coef(u, v, lv.w, lv.h);
                    if (bc.clamped_x || bc.clamped_y) ++overflow;
                    const double* r00 = pv + (lv.row0 + bc.y0 * lv.w + bc.x0) * d + hh * dh;
                    const double* r01 = pv + (lv.row0 + bc.y0 * lv.w + bc.x1) * d + hh * dh;
                    const double* r10 = pv + (lv.row0 + bc.y1 * lv.w + bc.x0) * d + hh * dh;
                    const double* r11 = pv + (lv.row0 + bc.y1 * lv.w + bc.x1) * d + hh * dh;
                    for (std::int64_t cc = 0; cc < dh; ++cc) {
                        dst[cc] += a * (bc.w00 * r00[cc] + bc.w01 * r01[cc] + bc.w10 * r10[cc] +
                                        bc.w11 * r11[cc]);
                    }
                }
            }
        }
    }
    detail::bump_overflow(overflow);
    OpAttrs at;
    at.levels = levels;
    at.heads = heads;
    Recorder rec{&value, &loc, &attn};
    rec.commit(Op::MsDeform, out, std::move(at));
    return out;
}

Tensor upsample2x(const Tensor& x) {
    if (x.ndim() != 3) throw ShapeError("upsample2x: want [H,W,C], got " + shape_str(x.shape));
    const std::int64_t h = x.shape[0], w = x.shape[1], c = x.shape[2];
    Tensor out = Tensor::uninit({static_cast<int>(2 * h), static_cast<int>(2 * w),
                                 static_cast<int>(c)});
    const double* px = x.ptr();
    double* po = out.ptr();
    for (std::int64_t y = 0; y < 2 * h; ++y) {
        for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
            const double* src = px + ((y / 2) * w + xx / 2) * c;
            double* dst = po + (y * 2 * w + xx) * c;
            std::memcpy(dst, src, static_cast<std::size_t>(c) * sizeof(double));
        }
    }
    Recorder rec{&x};
    rec.commit(Op::Upsample2x, out);
    return out;
}

} // namespace lidet
