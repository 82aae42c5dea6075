#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "metamirror/tensor.hpp"

namespace metamirror {

// Op kinds of the computation graph. The trailing entries past Constant are
// the differentiable primitives; every backward rule is expressed in terms
// of these same ops, which is what makes gradients-of-gradients a plain
// second grad() call.
enum class OpKind : std::uint8_t {
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Transpose,
    ModeProduct,
    Concat,
    Gather,
    Scatter,
    Reshape,
    Sum,
    Mean,
    Relu,
    Step,
    Logistic,
    Tanh,
    Sin,
    Cos,
    Square,
    SquaredError,
    SoftmaxXent,
    SoftmaxRows,
};

const char* op_name(OpKind op);

// Index of a node within a Graph. Valid only for the graph that created it.
struct VarRef {
    std::uint32_t index = UINT32_MAX;
    bool valid() const { return index != UINT32_MAX; }
    friend bool operator==(VarRef a, VarRef b) { return a.index == b.index; }
};

using IndexSet = std::vector<Index>;
using IndexSetPtr = std::shared_ptr<const IndexSet>;

// Per-node attributes; only the fields an op consumes are meaningful.
struct OpAttr {
    int mode = -1;        // ModeProduct: which mode the matrix contracts
    Shape shape;          // Reshape / Scatter target shape
    IndexSetPtr indices;  // Gather / Scatter flat index set
};

struct Node {
    OpKind op;
    std::vector<VarRef> inputs;
    OpAttr attr;
    Tensor value;
};

// Append-only computation graph with eager evaluation: apply() validates
// shapes, computes the node's value, and caches it. Single-writer; distinct
// graphs may be built and evaluated concurrently.
class Graph {
public:
    Graph() { nodes_.reserve(1024); }

    VarRef constant(Tensor value);

    VarRef apply(OpKind op, std::vector<VarRef> inputs, OpAttr attr = {});

    const Tensor& value(VarRef ref) const { return node(ref).value; }
    const Node& node(VarRef ref) const { return nodes_[ref.index]; }
    std::size_t size() const { return nodes_.size(); }

    // Checked mode: every newly cached value is scanned for NaN/Inf and a
    // ShapeError-free typed failure is raised on the spot.
    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

private:
    std::vector<Node> nodes_;
    bool check_finite_ = false;
};

// ---- op helpers (thin wrappers over Graph::apply) --------------------------

VarRef add(Graph& g, VarRef a, VarRef b);
VarRef sub(Graph& g, VarRef a, VarRef b);
VarRef mul(Graph& g, VarRef a, VarRef b);
VarRef div(Graph& g, VarRef a, VarRef b);
VarRef matmul(Graph& g, VarRef a, VarRef b);
VarRef transpose(Graph& g, VarRef x);
VarRef mode_product(Graph& g, VarRef x, VarRef u, int mode);
VarRef concat(Graph& g, const std::vector<VarRef>& parts);
VarRef gather(Graph& g, VarRef x, IndexSetPtr indices);
VarRef scatter(Graph& g, VarRef x, IndexSetPtr indices, Shape target_shape);
VarRef reshape(Graph& g, VarRef x, Shape shape);
VarRef sum(Graph& g, VarRef x);
VarRef mean(Graph& g, VarRef x);
VarRef relu(Graph& g, VarRef x);
VarRef step(Graph& g, VarRef x);
VarRef logistic(Graph& g, VarRef x);
VarRef tanh(Graph& g, VarRef x);
VarRef sin(Graph& g, VarRef x);
VarRef cos(Graph& g, VarRef x);
VarRef square(Graph& g, VarRef x);
VarRef squared_error(Graph& g, VarRef pred, VarRef target);
VarRef softmax_xent(Graph& g, VarRef logits, VarRef labels);
VarRef softmax_rows(Graph& g, VarRef logits);

VarRef scalar_const(Graph& g, double v);
VarRef ones_const(Graph& g, const Shape& shape);
VarRef zeros_const(Graph& g, const Shape& shape);
VarRef neg(Graph& g, VarRef x);

// Reverse-mode gradient of a scalar node with respect to `wrt`, emitted as
// new nodes into the same graph. The returned nodes are differentiable, so
// a second grad() call yields second-order derivatives; `create_graph` is
// accepted for call-site clarity (this implementation always emits
// differentiable nodes). Nodes in `wrt` that the output does not depend on
// receive a zero gradient.
std::vector<VarRef> grad(Graph& g, VarRef output,
                         const std::vector<VarRef>& wrt,
                         bool create_graph = true);

}  // namespace metamirror
