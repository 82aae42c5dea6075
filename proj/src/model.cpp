#include "metamirror/model.hpp"

#include <algorithm>
#include <cmath>

#include "metamirror/rng.hpp"

namespace metamirror {

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2) {
        throw InvalidArgumentError("MlpSpec: needs at least input and output sizes");
    }
    for (Index s : layer_sizes) {
        if (s <= 0) {
            throw InvalidArgumentError("MlpSpec: layer sizes must be positive");
        }
    }
}

Index MlpSpec::param_count() const {
    Index d = 0;
    for (Index l = 0; l < layer_count(); ++l) {
        d += layer_sizes[l + 1] * (layer_sizes[l] + 1);
    }
    return d;
}

Index Partition::total() const {
    Index d = 0;
    for (const auto& b : blocks) d += static_cast<Index>(b->size());
    return d;
}

void Partition::validate() const {
    if (blocks.empty()) {
        throw InvalidArgumentError("Partition: must have at least one block");
    }
    if (block_shapes.size() != blocks.size()) {
        throw InvalidArgumentError("Partition: one shape per block required");
    }
    const Index d = total();
    std::vector<char> seen(static_cast<std::size_t>(d), 0);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = *blocks[i];
        if (b.empty()) {
            throw InvalidArgumentError("Partition: blocks must be nonempty");
        }
        if (shape_numel(block_shapes[i]) != static_cast<Index>(b.size())) {
            throw InvalidArgumentError("Partition: block shape does not match size");
        }
        for (Index idx : b) {
            if (idx < 0 || idx >= d || seen[static_cast<std::size_t>(idx)]) {
                throw InvalidArgumentError(
                    "Partition: blocks must disjointly cover the index range");
            }
            seen[static_cast<std::size_t>(idx)] = 1;
        }
    }
}

FlatParams init_params(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    Tensor values = Tensor::zeros({spec.param_count()});
    Index at = 0;
    for (Index l = 0; l < spec.layer_count(); ++l) {
        const Index in = spec.layer_sizes[l];
        const Index out = spec.layer_sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (Index o = 0; o < out; ++o) {
            for (Index i = 0; i < in; ++i) {
                values[at++] = rng.uniform(-bound, bound);
            }
            values[at++] = 0.0;  // bias column
        }
    }
    return FlatParams{std::move(values)};
}

Partition partition_by_layer(const MlpSpec& spec) {
    spec.validate();
    Partition p;
    Index at = 0;
    for (Index l = 0; l < spec.layer_count(); ++l) {
        const Index in = spec.layer_sizes[l];
        const Index out = spec.layer_sizes[l + 1];
        auto block = std::make_shared<IndexSet>();
        block->reserve(static_cast<std::size_t>(out * (in + 1)));
        for (Index i = 0; i < out * (in + 1); ++i) block->push_back(at + i);
        at += out * (in + 1);
        p.blocks.push_back(std::move(block));
        p.block_shapes.push_back({out, in + 1});
    }
    return p;
}

Partition partition_from_sizes(const std::vector<Index>& sizes) {
    Partition p;
    Index at = 0;
    for (Index s : sizes) {
        auto block = std::make_shared<IndexSet>();
        for (Index i = 0; i < s; ++i) block->push_back(at + i);
        at += s;
        p.blocks.push_back(std::move(block));
        p.block_shapes.push_back({s});
    }
    p.validate();
    return p;
}

namespace {

struct LayerSlices {
    IndexSetPtr weight_idx;  // (out x in), row-major within the flat vector
    IndexSetPtr bias_idx;    // (out)
    Index in, out;
};

std::vector<LayerSlices> layer_slices(const MlpSpec& spec) {
    std::vector<LayerSlices> out;
    Index at = 0;
    for (Index l = 0; l < spec.layer_count(); ++l) {
        const Index in = spec.layer_sizes[l];
        const Index width = spec.layer_sizes[l + 1];
        auto widx = std::make_shared<IndexSet>();
        auto bidx = std::make_shared<IndexSet>();
        for (Index o = 0; o < width; ++o) {
            for (Index i = 0; i < in; ++i) widx->push_back(at + o * (in + 1) + i);
            bidx->push_back(at + o * (in + 1) + in);
        }
        at += width * (in + 1);
        out.push_back(LayerSlices{std::move(widx), std::move(bidx), in, width});
    }
    return out;
}

// h + 1_N * b_row; the ones-matmul trick keeps the op set small and the
// bias gradient (a column sum) falls out of the matmul backward rule.
VarRef add_row_bias(Graph& g, VarRef h, VarRef bias_row, Index n) {
    return add(g, h, matmul(g, ones_const(g, {n, 1}), bias_row));
}

}  // namespace

VarRef mlp_forward(Graph& g, const MlpSpec& spec, VarRef params, VarRef inputs) {
    spec.validate();
    const Tensor& x = g.value(inputs);
    if (x.rank() != 2 || x.dim(1) != spec.layer_sizes.front()) {
        throw ShapeError("mlp_forward: inputs " + shape_to_string(x.shape()) +
                         " do not match input size " +
                         std::to_string(spec.layer_sizes.front()));
    }
    if (g.value(params).numel() != spec.param_count()) {
        throw ShapeError("mlp_forward: params length " +
                         std::to_string(g.value(params).numel()) +
                         " does not match spec parameter count " +
                         std::to_string(spec.param_count()));
    }
    const Index n = x.dim(0);
    VarRef h = inputs;
    auto slices = layer_slices(spec);
    for (std::size_t l = 0; l < slices.size(); ++l) {
        const auto& s = slices[l];
        VarRef w = reshape(g, gather(g, params, s.weight_idx), {s.out, s.in});
        VarRef b = reshape(g, gather(g, params, s.bias_idx), {1, s.out});
        h = add_row_bias(g, matmul(g, h, transpose(g, w)), b, n);
        if (l + 1 < slices.size()) h = relu(g, h);
    }
    return h;
}

VarRef mlp_loss(Graph& g, const MlpSpec& spec, VarRef params, VarRef inputs,
                VarRef labels) {
    const Tensor& x = g.value(inputs);
    if (x.numel() == 0 || x.dim(0) == 0) {
        throw InvalidArgumentError("mlp_loss: empty data split");
    }
    VarRef pred = mlp_forward(g, spec, params, inputs);
    if (spec.head == HeadKind::Regression) {
        return mean(g, squared_error(g, pred, labels));
    }
    return softmax_xent(g, pred, labels);
}

VarRef mlp_loss_on_split(Graph& g, const MlpSpec& spec, VarRef params,
                         const Tensor& inputs, const Tensor& labels) {
    return mlp_loss(g, spec, params, g.constant(inputs), g.constant(labels));
}

}  // namespace metamirror
