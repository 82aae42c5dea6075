#pragma once

#include <cstdint>
#include <vector>

#include "metamirror/graph.hpp"
#include "metamirror/tasks.hpp"

namespace metamirror {

enum class HeadKind : std::uint8_t { Regression, Classification };

// A small fully-connected ReLU network operating on one flat parameter
// vector. Layer l maps layer_sizes[l] -> layer_sizes[l+1]; the head is
// linear (regression) or linear with softmax folded into the loss
// (classification).
struct MlpSpec {
    std::vector<Index> layer_sizes;
    HeadKind head = HeadKind::Regression;

    void validate() const;
    Index layer_count() const { return static_cast<Index>(layer_sizes.size()) - 1; }
    Index param_count() const;
};

// The flat task parameter vector: per layer, the (out x (in+1)) block of
// weights with the bias appended as the last column, laid out row-major.
struct FlatParams {
    Tensor values;
};

// Ordered disjoint index blocks covering {0..d-1}, one per model layer, with
// the tensor shape each block is viewed as by the mirror map.
struct Partition {
    std::vector<IndexSetPtr> blocks;
    std::vector<Shape> block_shapes;

    Index block_count() const { return static_cast<Index>(blocks.size()); }
    Index total() const;
    void validate() const;  // disjoint, nonempty, exhaustive over {0..total-1}
};

FlatParams init_params(const MlpSpec& spec, std::uint64_t seed);
Partition partition_by_layer(const MlpSpec& spec);

// Builds a partition over {0..d-1} from plain block sizes; each block is
// viewed as a rank-1 tensor. Used by map tests over arbitrary partitions.
Partition partition_from_sizes(const std::vector<Index>& sizes);

// Predictions node for a batch of inputs; differentiable with respect to
// `params`. Inputs must be (N x layer_sizes[0]).
VarRef mlp_forward(Graph& g, const MlpSpec& spec, VarRef params, VarRef inputs);

// Mean loss over one split: MSE for regression, softmax cross-entropy for
// classification. Empty splits are rejected.
VarRef mlp_loss(Graph& g, const MlpSpec& spec, VarRef params, VarRef inputs,
                VarRef labels);

// Stages one split of a task as constants and returns the loss node.
VarRef mlp_loss_on_split(Graph& g, const MlpSpec& spec, VarRef params,
                         const Tensor& inputs, const Tensor& labels);

}  // namespace metamirror
