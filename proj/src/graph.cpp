#include "metamirror/graph.hpp"

#include <algorithm>
#include <cmath>

namespace metamirror {

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Constant: return "constant";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::MatMul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::ModeProduct: return "mode_product";
        case OpKind::Concat: return "concat";
        case OpKind::Gather: return "gather";
        case OpKind::Scatter: return "scatter";
        case OpKind::Reshape: return "reshape";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::Relu: return "relu";
        case OpKind::Step: return "step";
        case OpKind::Logistic: return "logistic";
        case OpKind::Tanh: return "tanh";
        case OpKind::Sin: return "sin";
        case OpKind::Cos: return "cos";
        case OpKind::Square: return "square";
        case OpKind::SquaredError: return "squared_error";
        case OpKind::SoftmaxXent: return "softmax_xent";
        case OpKind::SoftmaxRows: return "softmax_rows";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
    throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

// Elementwise binary with scalar-with-tensor broadcast. No other broadcast
// is supported; mismatched non-scalar shapes are an error.
template <typename F>
Tensor ewise_binary(OpKind op, const Tensor& a, const Tensor& b, F f) {
    if (a.same_shape(b)) {
        Tensor out = Tensor::zeros(a.shape());
        for (Index i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    if (a.is_scalar()) {
        Tensor out = Tensor::zeros(b.shape());
        const double av = a[0];
        for (Index i = 0; i < b.numel(); ++i) out[i] = f(av, b[i]);
        return out;
    }
    if (b.is_scalar()) {
        Tensor out = Tensor::zeros(a.shape());
        const double bv = b[0];
        for (Index i = 0; i < a.numel(); ++i) out[i] = f(a[i], bv);
        return out;
    }
    shape_fail(op, "shape mismatch " + shape_to_string(a.shape()) + " vs " +
                       shape_to_string(b.shape()));
}

template <typename F>
Tensor ewise_unary(const Tensor& x, F f) {
    Tensor out = Tensor::zeros(x.shape());
    for (Index i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    return out;
}

Tensor eval_matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        shape_fail(OpKind::MatMul, "operands must be rank-2, got " +
                                       shape_to_string(a.shape()) + " and " +
                                       shape_to_string(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        shape_fail(OpKind::MatMul, "inner dimensions differ: " +
                                       shape_to_string(a.shape()) + " * " +
                                       shape_to_string(b.shape()));
    }
    Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
    as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
    return out;
}

Tensor eval_transpose(const Tensor& x) {
    if (x.rank() != 2) {
        shape_fail(OpKind::Transpose,
                   "operand must be rank-2, got " + shape_to_string(x.shape()));
    }
    Tensor out = Tensor::zeros({x.dim(1), x.dim(0)});
    as_matrix(out) = as_matrix(x).transpose();
    return out;
}

// Mode-k contraction of a rank-1 or rank-2 tensor with a matrix
// U (p x dim[k]); the k-th dimension is replaced by p.
Tensor eval_mode_product(const Tensor& x, const Tensor& u, int mode) {
    if (u.rank() != 2) {
        shape_fail(OpKind::ModeProduct,
                   "matrix operand must be rank-2, got " +
                       shape_to_string(u.shape()));
    }
    if (mode < 0 || mode >= x.rank()) {
        shape_fail(OpKind::ModeProduct,
                   "mode " + std::to_string(mode) + " out of range for " +
                       shape_to_string(x.shape()));
    }
    if (u.dim(1) != x.dim(mode)) {
        shape_fail(OpKind::ModeProduct,
                   "matrix " + shape_to_string(u.shape()) +
                       " does not contract mode " + std::to_string(mode) +
                       " of " + shape_to_string(x.shape()));
    }
    const Index p = u.dim(0);
    if (x.rank() == 1) {
        Tensor out = Tensor::zeros({p});
        Eigen::Map<Eigen::VectorXd>(out.data(), p).noalias() =
            as_matrix(u) * Eigen::Map<const Eigen::VectorXd>(x.data(), x.dim(0));
        return out;
    }
    if (x.rank() == 2) {
        if (mode == 0) {
            Tensor out = Tensor::zeros({p, x.dim(1)});
            as_matrix(out).noalias() = as_matrix(u) * as_matrix(x);
            return out;
        }
        Tensor out = Tensor::zeros({x.dim(0), p});
        as_matrix(out).noalias() = as_matrix(x) * as_matrix(u).transpose();
        return out;
    }
    shape_fail(OpKind::ModeProduct,
               "only rank-1/rank-2 tensors are supported, got " +
                   shape_to_string(x.shape()));
}

Tensor eval_concat(const std::vector<const Tensor*>& parts) {
    Index total = 0;
    for (const Tensor* t : parts) {
        if (t->rank() != 1) {
            shape_fail(OpKind::Concat, "operands must be rank-1, got " +
                                           shape_to_string(t->shape()));
        }
        total += t->numel();
    }
    Tensor out = Tensor::zeros({total});
    Index at = 0;
    for (const Tensor* t : parts) {
        for (Index i = 0; i < t->numel(); ++i) out[at++] = (*t)[i];
    }
    return out;
}

Tensor eval_gather(const Tensor& x, const IndexSet& idx) {
    Tensor out = Tensor::zeros({static_cast<Index>(idx.size())});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= x.numel()) {
            shape_fail(OpKind::Gather, "index " + std::to_string(idx[i]) +
                                           " out of range for " +
                                           shape_to_string(x.shape()));
        }
        out[static_cast<Index>(i)] = x[idx[i]];
    }
    return out;
}

Tensor eval_scatter(const Tensor& x, const IndexSet& idx, const Shape& shape) {
    if (x.rank() != 1 || x.numel() != static_cast<Index>(idx.size())) {
        shape_fail(OpKind::Scatter,
                   "value must be rank-1 with one entry per index, got " +
                       shape_to_string(x.shape()) + " for " +
                       std::to_string(idx.size()) + " indices");
    }
    Tensor out = Tensor::zeros(shape);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= out.numel()) {
            shape_fail(OpKind::Scatter, "index " + std::to_string(idx[i]) +
                                            " out of range for " +
                                            shape_to_string(shape));
        }
        out[idx[i]] += x[static_cast<Index>(i)];
    }
    return out;
}

Tensor eval_softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) {
        shape_fail(OpKind::SoftmaxRows, "logits must be rank-2, got " +
                                            shape_to_string(logits.shape()));
    }
    const Index n = logits.dim(0), m = logits.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (Index r = 0; r < n; ++r) {
        const double* row = logits.data() + r * m;
        double mx = row[0];
        for (Index c = 1; c < m; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (Index c = 0; c < m; ++c) z += std::exp(row[c] - mx);
        for (Index c = 0; c < m; ++c) {
            out[r * m + c] = std::exp(row[c] - mx) / z;
        }
    }
    return out;
}

Tensor eval_softmax_xent(const Tensor& logits, const Tensor& labels) {
    if (logits.rank() != 2) {
        shape_fail(OpKind::SoftmaxXent, "logits must be rank-2, got " +
                                            shape_to_string(logits.shape()));
    }
    const Index n = logits.dim(0), m = logits.dim(1);
    if (labels.rank() != 1 || labels.numel() != n) {
        shape_fail(OpKind::SoftmaxXent,
                   "labels must be rank-1 with one entry per row, got " +
                       shape_to_string(labels.shape()) + " for " +
                       std::to_string(n) + " rows");
    }
    double total = 0.0;
    for (Index r = 0; r < n; ++r) {
        const double lv = labels[r];
        const Index label = static_cast<Index>(lv);
        if (static_cast<double>(label) != lv || label < 0 || label >= m) {
            shape_fail(OpKind::SoftmaxXent,
                       "label " + std::to_string(lv) +
                           " is not a class index in [0, " + std::to_string(m) +
                           ")");
        }
        const double* row = logits.data() + r * m;
        double mx = row[0];
        for (Index c = 1; c < m; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (Index c = 0; c < m; ++c) z += std::exp(row[c] - mx);
        total += mx + std::log(z) - row[label];
    }
    return Tensor::scalar(total / static_cast<double>(n));
}

Tensor eval_op(OpKind op, const std::vector<const Tensor*>& in,
               const OpAttr& attr) {
    switch (op) {
        case OpKind::Constant:
            throw ShapeError("constant nodes are created via Graph::constant");
        case OpKind::Add:
            return ewise_binary(op, *in[0], *in[1],
                                [](double a, double b) { return a + b; });
        case OpKind::Sub:
            return ewise_binary(op, *in[0], *in[1],
                                [](double a, double b) { return a - b; });
        case OpKind::Mul:
            return ewise_binary(op, *in[0], *in[1],
                                [](double a, double b) { return a * b; });
        case OpKind::Div:
            return ewise_binary(op, *in[0], *in[1],
                                [](double a, double b) { return a / b; });
        case OpKind::MatMul:
            return eval_matmul(*in[0], *in[1]);
        case OpKind::Transpose:
            return eval_transpose(*in[0]);
        case OpKind::ModeProduct:
            return eval_mode_product(*in[0], *in[1], attr.mode);
        case OpKind::Concat:
            return eval_concat(in);
        case OpKind::Gather:
            return eval_gather(*in[0], *attr.indices);
        case OpKind::Scatter:
            return eval_scatter(*in[0], *attr.indices, attr.shape);
        case OpKind::Reshape: {
            const Tensor& x = *in[0];
            if (shape_numel(attr.shape) != x.numel()) {
                shape_fail(op, "cannot reshape " + shape_to_string(x.shape()) +
                                   " to " + shape_to_string(attr.shape));
            }
            return Tensor(attr.shape, x.array());
        }
        case OpKind::Sum:
            return Tensor::scalar(in[0]->array().sum());
        case OpKind::Mean:
            return Tensor::scalar(in[0]->array().mean());
        case OpKind::Relu:
            return ewise_unary(*in[0],
                               [](double v) { return v > 0.0 ? v : 0.0; });
        case OpKind::Step:
            return ewise_unary(*in[0],
                               [](double v) { return v > 0.0 ? 1.0 : 0.0; });
        case OpKind::Logistic:
            return ewise_unary(*in[0],
                               [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        case OpKind::Tanh:
            return ewise_unary(*in[0], [](double v) { return std::tanh(v); });
        case OpKind::Sin:
            return ewise_unary(*in[0], [](double v) { return std::sin(v); });
        case OpKind::Cos:
            return ewise_unary(*in[0], [](double v) { return std::cos(v); });
        case OpKind::Square:
            return ewise_unary(*in[0], [](double v) { return v * v; });
        case OpKind::SquaredError: {
            if (!in[0]->same_shape(*in[1])) {
                shape_fail(op, "shape mismatch " +
                                   shape_to_string(in[0]->shape()) + " vs " +
                                   shape_to_string(in[1]->shape()));
            }
            return ewise_binary(op, *in[0], *in[1], [](double a, double b) {
                const double d = a - b;
                return d * d;
            });
        }
        case OpKind::SoftmaxXent:
            return eval_softmax_xent(*in[0], *in[1]);
        case OpKind::SoftmaxRows:
            return eval_softmax_rows(*in[0]);
    }
    throw ShapeError("unknown op kind");
}

}  // namespace

VarRef Graph::constant(Tensor value) {
    if (check_finite_ && !value.all_finite()) {
        throw InvalidArgumentError("constant: non-finite value in checked graph");
    }
    VarRef ref{static_cast<std::uint32_t>(nodes_.size())};
    nodes_.push_back(Node{OpKind::Constant, {}, {}, std::move(value)});
    return ref;
}

VarRef Graph::apply(OpKind op, std::vector<VarRef> inputs, OpAttr attr) {
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    for (VarRef r : inputs) {
        if (!r.valid() || r.index >= nodes_.size()) {
            throw InvalidArgumentError(std::string(op_name(op)) +
                                       ": input VarRef is not in this graph");
        }
        in.push_back(&nodes_[r.index].value);
    }
    Tensor value = eval_op(op, in, attr);
    if (check_finite_ && !value.all_finite()) {
        throw InvalidArgumentError(std::string(op_name(op)) +
                                   ": produced a non-finite value");
    }
    VarRef ref{static_cast<std::uint32_t>(nodes_.size())};
    nodes_.push_back(Node{op, std::move(inputs), std::move(attr), std::move(value)});
    return ref;
}

VarRef add(Graph& g, VarRef a, VarRef b) { return g.apply(OpKind::Add, {a, b}); }
VarRef sub(Graph& g, VarRef a, VarRef b) { return g.apply(OpKind::Sub, {a, b}); }
VarRef mul(Graph& g, VarRef a, VarRef b) { return g.apply(OpKind::Mul, {a, b}); }
VarRef div(Graph& g, VarRef a, VarRef b) { return g.apply(OpKind::Div, {a, b}); }

VarRef matmul(Graph& g, VarRef a, VarRef b) {
    return g.apply(OpKind::MatMul, {a, b});
}

VarRef transpose(Graph& g, VarRef x) { return g.apply(OpKind::Transpose, {x}); }

VarRef mode_product(Graph& g, VarRef x, VarRef u, int mode) {
    OpAttr attr;
    attr.mode = mode;
    return g.apply(OpKind::ModeProduct, {x, u}, std::move(attr));
}

VarRef concat(Graph& g, const std::vector<VarRef>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat: needs at least one operand");
    }
    return g.apply(OpKind::Concat, parts);
}

VarRef gather(Graph& g, VarRef x, IndexSetPtr indices) {
    OpAttr attr;
    attr.indices = std::move(indices);
    return g.apply(OpKind::Gather, {x}, std::move(attr));
}

VarRef scatter(Graph& g, VarRef x, IndexSetPtr indices, Shape target_shape) {
    OpAttr attr;
    attr.indices = std::move(indices);
    attr.shape = std::move(target_shape);
    return g.apply(OpKind::Scatter, {x}, std::move(attr));
}

VarRef reshape(Graph& g, VarRef x, Shape shape) {
    OpAttr attr;
    attr.shape = std::move(shape);
    return g.apply(OpKind::Reshape, {x}, std::move(attr));
}

VarRef sum(Graph& g, VarRef x) { return g.apply(OpKind::Sum, {x}); }
VarRef mean(Graph& g, VarRef x) { return g.apply(OpKind::Mean, {x}); }
VarRef relu(Graph& g, VarRef x) { return g.apply(OpKind::Relu, {x}); }
VarRef step(Graph& g, VarRef x) { return g.apply(OpKind::Step, {x}); }
VarRef logistic(Graph& g, VarRef x) { return g.apply(OpKind::Logistic, {x}); }
VarRef tanh(Graph& g, VarRef x) { return g.apply(OpKind::Tanh, {x}); }
VarRef sin(Graph& g, VarRef x) { return g.apply(OpKind::Sin, {x}); }
VarRef cos(Graph& g, VarRef x) { return g.apply(OpKind::Cos, {x}); }
VarRef square(Graph& g, VarRef x) { return g.apply(OpKind::Square, {x}); }

VarRef squared_error(Graph& g, VarRef pred, VarRef target) {
    return g.apply(OpKind::SquaredError, {pred, target});
}

VarRef softmax_xent(Graph& g, VarRef logits, VarRef labels) {
    return g.apply(OpKind::SoftmaxXent, {logits, labels});
}

VarRef softmax_rows(Graph& g, VarRef logits) {
    return g.apply(OpKind::SoftmaxRows, {logits});
}

VarRef scalar_const(Graph& g, double v) { return g.constant(Tensor::scalar(v)); }

VarRef ones_const(Graph& g, const Shape& shape) {
    return g.constant(Tensor::ones(shape));
}

VarRef zeros_const(Graph& g, const Shape& shape) {
    return g.constant(Tensor::zeros(shape));
}

VarRef neg(Graph& g, VarRef x) { return mul(g, scalar_const(g, -1.0), x); }

}  // namespace metamirror
