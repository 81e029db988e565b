#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include "lidet/tensor.hpp"

namespace lidet {

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    AddScalar,
    MatMul,
    Conv2d,
    Relu,
    Sigmoid,
    Softmax,
    LayerNorm,
    Gather,
    ScatterAdd,
    SegmentMax,
    Reshape,
    Transpose,
    Concat,
    Slice,
    Sin,
    Cos,
    Log,
    Exp,
    Abs,
    Sqrt,
    PowC,
    Clamp,
    ReduceSum,
    ReduceMean,
    Bilinear,
    MsDeform,
    Upsample2x,
};

const char* op_name(Op op);

struct MsLevel {
    int h = 0;
    int w = 0;
    std::int64_t row0 = 0; // first row of this level in the stacked value tensor
};

struct OpAttrs {
    int axis = -1;
    double scalar = 0.0;  // scale factor / added scalar / pow exponent / clamp lo
    double scalar2 = 0.0; // clamp hi
    double eps = 0.0;
    int stride = 1;
    int pad = 0;
    int start = 0; // slice
    int len = 0;
    int out_rows = 0; // scatter_add / segment_max
    std::vector<int> perm;
    std::shared_ptr<std::vector<std::int64_t>> index;  // gather/scatter/segment ids
    std::shared_ptr<std::vector<std::int64_t>> argmax; // segment_max winners, per output elem
    std::vector<MsLevel> levels;                       // ms_deform_attn
    int heads = 0;
};

struct TapeNode {
    Op op;
    std::vector<int> inputs; // node ids, -1 for constants
    Shape shape;
    std::shared_ptr<std::vector<double>> out;
    std::vector<std::shared_ptr<std::vector<double>>> saved; // input buffers, in order
    std::vector<Shape> in_shapes;
    OpAttrs attrs;
};

// Single-writer reverse-mode tape. Nodes are appended in execution order and
// backward walks them strictly in reverse. A tape may be differentiated once;
// a second backward() call is rejected.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int record(Op op, std::vector<int> inputs, Shape shape, std::shared_ptr<std::vector<double>> out,
               std::vector<std::shared_ptr<std::vector<double>>> saved, std::vector<Shape> in_shapes,
               OpAttrs attrs);

    // Leaf id for a grad-requiring tensor created off-tape (model parameters,
    // watched inputs). Memoized per data buffer.
    int leaf_for(const Tensor& t);

    void backward(const Tensor& root);

    // Gradient of a leaf/recorded tensor after backward(); nullptr when the
    // tensor never participated in the graph.
    const std::vector<double>* grad(const Tensor& t) const;
    const std::vector<double>* grad_of_node(int node) const;

    std::size_t num_nodes() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    std::vector<TapeNode> nodes_;
    std::unordered_map<const void*, int> leaf_ids_;
    std::vector<std::vector<double>> grads_;
    bool backward_done_ = false;

    void backprop_node(int id);
    std::vector<double>* grad_buf(int id);
};

Tape* current_tape();

// RAII scope that makes `tape` the recording target for this thread.
struct TapeScope {
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

} // namespace lidet
