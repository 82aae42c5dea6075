#include <algorithm>
#include <optional>

#include "metamirror/graph.hpp"

namespace metamirror {

namespace {

// Adjoint bookkeeping for one backward sweep. Contributions are emitted as
// ordinary graph nodes, so the result of grad() is itself differentiable.
struct Sweep {
    Graph& g;
    std::vector<std::optional<VarRef>> adjoint;
    const std::vector<char>& relevant;

    void accumulate(VarRef target, VarRef contribution) {
        if (target.index >= relevant.size() || !relevant[target.index]) return;
        auto& slot = adjoint[target.index];
        slot = slot ? add(g, *slot, contribution) : contribution;
    }
};

// Reduces a gradient to the shape of `target` under the scalar-with-tensor
// broadcast rule: a broadcast scalar input collects the full sum. Shapes are
// copied up front: emitting nodes may reallocate the graph's storage.
VarRef reduce_to(Graph& g, VarRef grad_ref, VarRef target) {
    const Shape gs = g.value(grad_ref).shape();
    const Shape ts = g.value(target).shape();
    if (gs == ts) return grad_ref;
    if (shape_numel(ts) == 1) {
        return reshape(g, sum(g, grad_ref), ts);
    }
    // same numel, different shape cannot occur for the broadcast rule
    return reshape(g, grad_ref, ts);
}

void backward_node(Sweep& s, std::uint32_t index) {
    Graph& g = s.g;
    // Copy the node's description: emitting contribution nodes below grows
    // the node vector and would invalidate any reference into it.
    const OpKind op = g.node(VarRef{index}).op;
    const std::vector<VarRef> inputs = g.node(VarRef{index}).inputs;
    const OpAttr attr = g.node(VarRef{index}).attr;
    const VarRef y{index};
    const VarRef gy = *s.adjoint[index];

    auto in = [&](std::size_t k) { return inputs[k]; };

    switch (op) {
        case OpKind::Constant:
            return;
        case OpKind::Add:
            s.accumulate(in(0), reduce_to(g, gy, in(0)));
            s.accumulate(in(1), reduce_to(g, gy, in(1)));
            return;
        case OpKind::Sub:
            s.accumulate(in(0), reduce_to(g, gy, in(0)));
            s.accumulate(in(1), reduce_to(g, neg(g, gy), in(1)));
            return;
        case OpKind::Mul:
            s.accumulate(in(0), reduce_to(g, mul(g, gy, in(1)), in(0)));
            s.accumulate(in(1), reduce_to(g, mul(g, gy, in(0)), in(1)));
            return;
        case OpKind::Div:
            s.accumulate(in(0), reduce_to(g, div(g, gy, in(1)), in(0)));
            s.accumulate(in(1),
                         reduce_to(g,
                                   neg(g, mul(g, gy,
                                              div(g, in(0), square(g, in(1))))),
                                   in(1)));
            return;
        case OpKind::MatMul:
            s.accumulate(in(0), matmul(g, gy, transpose(g, in(1))));
            s.accumulate(in(1), matmul(g, transpose(g, in(0)), gy));
            return;
        case OpKind::Transpose:
            s.accumulate(in(0), transpose(g, gy));
            return;
        case OpKind::ModeProduct: {
            const int mode = attr.mode;
            const Index x_rank = g.value(in(0)).rank();
            const Index x_numel = g.value(in(0)).numel();
            const Index y_numel = g.value(y).numel();
            s.accumulate(in(0),
                         mode_product(g, gy, transpose(g, in(1)), mode));
            if (x_rank == 1) {
                s.accumulate(in(1), matmul(g, reshape(g, gy, {y_numel, 1}),
                                           reshape(g, in(0), {1, x_numel})));
            } else if (mode == 0) {
                s.accumulate(in(1), matmul(g, gy, transpose(g, in(0))));
            } else {
                s.accumulate(in(1), matmul(g, transpose(g, gy), in(0)));
            }
            return;
        }
        case OpKind::Concat: {
            Index offset = 0;
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                const Index len = g.value(in(k)).numel();
                auto idx = std::make_shared<IndexSet>();
                idx->reserve(static_cast<std::size_t>(len));
                for (Index i = 0; i < len; ++i) idx->push_back(offset + i);
                s.accumulate(in(k), gather(g, gy, std::move(idx)));
                offset += len;
            }
            return;
        }
        case OpKind::Gather:
            s.accumulate(in(0),
                         scatter(g, gy, attr.indices, g.value(in(0)).shape()));
            return;
        case OpKind::Scatter:
            s.accumulate(in(0), gather(g, gy, attr.indices));
            return;
        case OpKind::Reshape:
            s.accumulate(in(0), reshape(g, gy, g.value(in(0)).shape()));
            return;
        case OpKind::Sum:
            s.accumulate(in(0),
                         mul(g, gy, ones_const(g, g.value(in(0)).shape())));
            return;
        case OpKind::Mean: {
            const double inv_n = 1.0 / static_cast<double>(g.value(in(0)).numel());
            VarRef scaled = mul(g, gy, scalar_const(g, inv_n));
            s.accumulate(in(0),
                         mul(g, scaled, ones_const(g, g.value(in(0)).shape())));
            return;
        }
        case OpKind::Relu:
            s.accumulate(in(0), mul(g, gy, step(g, in(0))));
            return;
        case OpKind::Step:
            return;  // derivative is zero almost everywhere
        case OpKind::Logistic:
            s.accumulate(in(0),
                         mul(g, gy, mul(g, y, sub(g, scalar_const(g, 1.0), y))));
            return;
        case OpKind::Tanh:
            s.accumulate(in(0),
                         mul(g, gy, sub(g, scalar_const(g, 1.0), square(g, y))));
            return;
        case OpKind::Sin:
            s.accumulate(in(0), mul(g, gy, cos(g, in(0))));
            return;
        case OpKind::Cos:
            s.accumulate(in(0), neg(g, mul(g, gy, sin(g, in(0)))));
            return;
        case OpKind::Square:
            s.accumulate(in(0),
                         mul(g, gy, mul(g, scalar_const(g, 2.0), in(0))));
            return;
        case OpKind::SquaredError: {
            VarRef diff2 = mul(g, scalar_const(g, 2.0), sub(g, in(0), in(1)));
            VarRef ga = mul(g, gy, diff2);
            s.accumulate(in(0), ga);
            s.accumulate(in(1), neg(g, ga));
            return;
        }
        case OpKind::SoftmaxXent: {
            const Tensor& logits = g.value(in(0));
            const Tensor& labels = g.value(in(1));
            const Index rows = logits.dim(0), cols = logits.dim(1);
            Tensor onehot = Tensor::zeros({rows, cols});
            for (Index r = 0; r < rows; ++r) {
                onehot[r * cols + static_cast<Index>(labels[r])] = 1.0;
            }
            VarRef delta = sub(g, softmax_rows(g, in(0)), g.constant(onehot));
            VarRef scale =
                mul(g, gy, scalar_const(g, 1.0 / static_cast<double>(rows)));
            s.accumulate(in(0), mul(g, scale, delta));
            return;  // labels carry no gradient
        }
        case OpKind::SoftmaxRows: {
            // dL = S * (G - rowsum(G*S) broadcast over columns)
            const Index cols = g.value(y).dim(1);
            VarRef gs = mul(g, gy, y);
            VarRef row_sums = matmul(g, gs, ones_const(g, {cols, 1}));
            VarRef spread = matmul(g, row_sums, ones_const(g, {1, cols}));
            s.accumulate(in(0), mul(g, y, sub(g, gy, spread)));
            return;
        }
    }
}

}  // namespace

std::vector<VarRef> grad(Graph& g, VarRef output,
                         const std::vector<VarRef>& wrt, bool /*create_graph*/) {
    if (!output.valid() || output.index >= g.size()) {
        throw InvalidArgumentError("grad: output VarRef is not in this graph");
    }
    if (!g.value(output).is_scalar()) {
        throw InvalidArgumentError(
            "grad: output must be a scalar node, got shape " +
            shape_to_string(g.value(output).shape()));
    }

    const std::size_t n0 = output.index + 1;

    // The sweep is restricted to ancestors(output) that are also descendants
    // of some wrt node; everything else cannot carry gradient to `wrt` and
    // is skipped. This keeps per-step inner-loop gradients from re-walking
    // the whole unrolled history.
    std::uint32_t min_index = output.index;
    std::vector<char> is_descendant(n0, 0);
    for (VarRef w : wrt) {
        if (w.valid() && w.index < n0) {
            is_descendant[w.index] = 1;
            min_index = std::min(min_index, w.index);
        }
    }
    for (std::size_t i = min_index; i < n0; ++i) {
        if (is_descendant[i]) continue;
        for (VarRef input : g.node(VarRef{static_cast<std::uint32_t>(i)}).inputs) {
            if (input.index < n0 && is_descendant[input.index]) {
                is_descendant[i] = 1;
                break;
            }
        }
    }

    std::vector<char> is_ancestor(n0, 0);
    is_ancestor[output.index] = 1;
    for (std::size_t i = n0; i-- > min_index;) {
        if (!is_ancestor[i]) continue;
        for (VarRef input : g.node(VarRef{static_cast<std::uint32_t>(i)}).inputs) {
            is_ancestor[input.index] = 1;
        }
    }

    std::vector<char> relevant(n0, 0);
    for (std::size_t i = min_index; i < n0; ++i) {
        relevant[i] = is_ancestor[i] && is_descendant[i];
    }

    Sweep sweep{g, std::vector<std::optional<VarRef>>(n0), relevant};
    sweep.adjoint[output.index] =
        g.constant(Tensor::ones(g.value(output).shape()));

    for (std::size_t i = n0; i-- > min_index;) {
        if (!is_ancestor[i] || !sweep.adjoint[i]) continue;
        backward_node(sweep, static_cast<std::uint32_t>(i));
    }

    std::vector<VarRef> out;
    out.reserve(wrt.size());
    for (VarRef w : wrt) {
        if (w.valid() && w.index < n0 && sweep.adjoint[w.index]) {
            out.push_back(*sweep.adjoint[w.index]);
        } else if (w.valid() && w.index < g.size()) {
            out.push_back(zeros_const(g, g.value(w).shape()));
        } else {
            throw InvalidArgumentError("grad: wrt VarRef is not in this graph");
        }
    }
    return out;
}

}  // namespace metamirror
