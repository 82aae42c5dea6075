#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metamirror/graph.hpp"
#include "metamirror/model.hpp"

namespace metamirror {

enum class MapKind : std::uint8_t {
    Identity,        // dual == primal; mirror descent reduces to plain GD
    DiagonalLinear,  // phi = diag(p) z, p > 0; the learned-diagonal baseline
    SpdLinear,       // phi = P z with P symmetric positive definite
    BlockIaf,        // learned block-autoregressive map, see below
};

const char* map_kind_name(MapKind kind);

// One Kronecker-factorized linear stage: a rank-1/rank-2 tensor is
// contracted mode by mode with small factor matrices, then shifted by a
// bias of the output shape. Equivalent to a low-rank Kronecker-structured
// weight matrix, so a stage never materializes anything of size d x d.
struct ModeLinear {
    std::vector<Tensor> factors;  // factor m has shape (out_dims[m] x in_dims[m])
    Tensor bias;                  // output shape
    Shape in_shape;
    Shape out_shape;
};

// Per-block encoder: three mode-factorized layers with ReLU between them.
// Layer l maps the block tensor to floor(dims / 2^l), clamped at 1.
struct BlockEncoder {
    std::vector<ModeLinear> layers;  // exactly 3
};

// Per-block decoder: a dense projection of the concatenated upstream
// embeddings up to floor(dims / 8), then three mode-factorized layers that
// mirror the encoder sizes back up. The final layer doubles the last
// dimension so the output splits into the scale logits and the shift.
struct BlockDecoder {
    Tensor input_weight;             // (numel(floor(dims/8)) x input_len)
    Tensor input_bias;               // shape floor(dims/8)
    std::vector<ModeLinear> layers;  // exactly 3; last output has 2x last dim
};

inline constexpr Index kSeedEmbeddingLen = 8;

// Learnable parameters of the block-autoregressive map. Block i is rescaled
// and shifted by (alpha_i, mu_i) decoded from the embeddings of blocks j < i;
// block 0 decodes a learnable constant embedding instead, which keeps its
// coefficients trainable while independent of the input.
struct BlockIafParams {
    std::vector<Shape> block_shapes;
    Tensor seed_embedding;               // length kSeedEmbeddingLen
    std::vector<BlockEncoder> encoders;  // blocks 0 .. B-2
    std::vector<BlockDecoder> decoders;  // blocks 0 .. B-1

    // Factors start near-identity with noise; every decoder's final layer
    // output is zeroed so the initial map is phi = 0.5 z.
    static BlockIafParams init(const std::vector<Shape>& block_shapes,
                               std::uint64_t seed);

    // Sets every parameter to zero: the reference point where alpha = mu = 0
    // and the map is exactly phi = 0.5 z.
    void zero_all();
};

Shape halved_shape(const Shape& s, int level);   // floor(dims / 2^level), min 1
Shape doubled_last(const Shape& s);

// A mirror map value: the inverse mirror map g applied by map_forward, with
// an exact inverse for every kind.
struct MirrorMap {
    MapKind kind = MapKind::Identity;
    Tensor diag;        // DiagonalLinear
    Tensor spd;         // SpdLinear, (d x d)
    BlockIafParams iaf; // BlockIaf

    static MirrorMap identity();
    static MirrorMap diagonal(Tensor p);             // requires p > 0 elementwise
    static MirrorMap spd_linear(Tensor p);           // requires symmetric PD
    static MirrorMap block_iaf(BlockIafParams iaf);

    // Learnable tensors in canonical order (stage_map stages the same order).
    std::vector<Tensor*> param_tensors();
    std::vector<const Tensor*> param_tensors() const;
    std::vector<std::string> param_names() const;
};

struct StagedModeLinear {
    std::vector<VarRef> factors;
    VarRef bias;
};

struct StagedEncoder {
    std::vector<StagedModeLinear> layers;
};

struct StagedDecoder {
    VarRef input_weight;
    VarRef input_bias;
    std::vector<StagedModeLinear> layers;
};

// Map parameters staged into a graph as leaf nodes, ready for differentiable
// use. `all_params` aligns with MirrorMap::param_tensors().
struct StagedMap {
    MapKind kind = MapKind::Identity;
    VarRef diag;
    VarRef spd;
    VarRef seed_embedding;
    std::vector<StagedEncoder> encoders;
    std::vector<StagedDecoder> decoders;
    std::vector<Shape> block_shapes;
    std::vector<IndexSetPtr> alpha_idx;  // per block, into the decoder output
    std::vector<IndexSetPtr> mu_idx;
    std::vector<VarRef> all_params;
    VarRef dec0_memo;  // decoder-0 output is input-independent; cached per graph
};

StagedMap stage_map(Graph& g, const MirrorMap& map);

// phi = g(z), differentiable with respect to z and the staged parameters.
VarRef map_forward(Graph& g, StagedMap& map, const Partition& partition, VarRef z);

// Convenience: stages `map` into `g` and applies it once.
VarRef map_forward(Graph& g, const MirrorMap& map, const Partition& partition,
                   VarRef z);

// Value-level forward, for property checks and inversion tests.
Tensor map_apply(const MirrorMap& map, const Partition& partition, const Tensor& z);

// Exact inverse: linear kinds invert directly; the block-autoregressive map
// is inverted block by block, recovering z_i from already-recovered blocks.
Tensor map_inverse(const MirrorMap& map, const Partition& partition,
                   const Tensor& phi);

// (z - z')^T (g(z) - g(z')); strictly positive for all distinct pairs.
// Equal inputs are rejected.
double monotonicity_witness(const MirrorMap& map, const Partition& partition,
                            const Tensor& z, const Tensor& z_prime);

// The Jacobian diagonal of the block map at z: the sigmoid of each scale
// logit, scattered back to original coordinate order. BlockIaf only.
Tensor diag_scale(const MirrorMap& map, const Partition& partition,
                  const Tensor& z);

}  // namespace metamirror
