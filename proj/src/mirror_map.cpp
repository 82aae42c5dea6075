#include "metamirror/mirror_map.hpp"

#include <cmath>

#include "metamirror/rng.hpp"

namespace metamirror {

const char* map_kind_name(MapKind kind) {
    switch (kind) {
        case MapKind::Identity: return "identity";
        case MapKind::DiagonalLinear: return "diagonal";
        case MapKind::SpdLinear: return "spd";
        case MapKind::BlockIaf: return "block_iaf";
    }
    return "?";
}

Shape halved_shape(const Shape& s, int level) {
    Shape out = s;
    for (Index& d : out) d = std::max<Index>(1, d >> level);
    return out;
}

Shape doubled_last(const Shape& s) {
    Shape out = s;
    out.back() *= 2;
    return out;
}

namespace {

Tensor near_identity(Index rows, Index cols, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    const double noise = 0.2 / std::sqrt(static_cast<double>(cols));
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            t[r * cols + c] = (r == c ? 1.0 : 0.0) + rng.uniform(-noise, noise);
        }
    }
    return t;
}

ModeLinear make_mode_linear(const Shape& in_shape, const Shape& out_shape,
                            Rng& rng, bool zero_output) {
    ModeLinear layer;
    layer.in_shape = in_shape;
    layer.out_shape = out_shape;
    for (std::size_t m = 0; m < in_shape.size(); ++m) {
        if (zero_output && m == 0) {
            layer.factors.push_back(Tensor::zeros({out_shape[m], in_shape[m]}));
        } else {
            layer.factors.push_back(near_identity(out_shape[m], in_shape[m], rng));
        }
    }
    layer.bias = Tensor::zeros(out_shape);
    return layer;
}

Index decoder_input_len(const std::vector<Shape>& block_shapes, std::size_t block) {
    if (block == 0) return kSeedEmbeddingLen;
    Index len = 0;
    for (std::size_t j = 0; j < block; ++j) {
        len += shape_numel(halved_shape(block_shapes[j], 3));
    }
    return len;
}

}  // namespace

BlockIafParams BlockIafParams::init(const std::vector<Shape>& block_shapes,
                                    std::uint64_t seed) {
    if (block_shapes.empty()) {
        throw InvalidArgumentError("BlockIafParams: needs at least one block");
    }
    Rng rng(seed);
    BlockIafParams p;
    p.block_shapes = block_shapes;
    p.seed_embedding = Tensor::zeros({kSeedEmbeddingLen});

    const std::size_t b = block_shapes.size();
    for (std::size_t i = 0; i + 1 < b; ++i) {
        BlockEncoder enc;
        for (int l = 0; l < 3; ++l) {
            enc.layers.push_back(make_mode_linear(halved_shape(block_shapes[i], l),
                                                  halved_shape(block_shapes[i], l + 1),
                                                  rng, false));
        }
        p.encoders.push_back(std::move(enc));
    }

    for (std::size_t i = 0; i < b; ++i) {
        BlockDecoder dec;
        const Shape s3 = halved_shape(block_shapes[i], 3);
        const Index in_len = decoder_input_len(block_shapes, i);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_len));
        Tensor w = Tensor::zeros({shape_numel(s3), in_len});
        for (Index k = 0; k < w.numel(); ++k) w[k] = rng.uniform(-bound, bound);
        dec.input_weight = std::move(w);
        dec.input_bias = Tensor::zeros(s3);
        for (int l = 0; l < 3; ++l) {
            const Shape in_shape = halved_shape(block_shapes[i], 3 - l);
            Shape out_shape = halved_shape(block_shapes[i], 2 - l);
            const bool final_layer = (l == 2);
            if (final_layer) out_shape = doubled_last(out_shape);
            dec.layers.push_back(
                make_mode_linear(in_shape, out_shape, rng, final_layer));
        }
        p.decoders.push_back(std::move(dec));
    }
    return p;
}

void BlockIafParams::zero_all() {
    seed_embedding = Tensor::zeros(seed_embedding.shape());
    auto zero_layer = [](ModeLinear& l) {
        for (Tensor& f : l.factors) f = Tensor::zeros(f.shape());
        l.bias = Tensor::zeros(l.bias.shape());
    };
    for (BlockEncoder& e : encoders) {
        for (ModeLinear& l : e.layers) zero_layer(l);
    }
    for (BlockDecoder& d : decoders) {
        d.input_weight = Tensor::zeros(d.input_weight.shape());
        d.input_bias = Tensor::zeros(d.input_bias.shape());
        for (ModeLinear& l : d.layers) zero_layer(l);
    }
}

MirrorMap MirrorMap::identity() { return MirrorMap{}; }

MirrorMap MirrorMap::diagonal(Tensor p) {
    for (Index i = 0; i < p.numel(); ++i) {
        if (!(p[i] > 0.0)) {
            throw InvalidArgumentError(
                "MirrorMap::diagonal: entries must be strictly positive");
        }
    }
    MirrorMap m;
    m.kind = MapKind::DiagonalLinear;
    m.diag = std::move(p);
    return m;
}

MirrorMap MirrorMap::spd_linear(Tensor p) {
    if (p.rank() != 2 || p.dim(0) != p.dim(1)) {
        throw InvalidArgumentError("MirrorMap::spd_linear: matrix must be square");
    }
    const Index d = p.dim(0);
    double scale = 0.0;
    for (Index i = 0; i < p.numel(); ++i) scale = std::max(scale, std::abs(p[i]));
    for (Index r = 0; r < d; ++r) {
        for (Index c = 0; c < r; ++c) {
            if (std::abs(p[r * d + c] - p[c * d + r]) > 1e-12 * std::max(1.0, scale)) {
                throw InvalidArgumentError(
                    "MirrorMap::spd_linear: matrix is not symmetric");
            }
        }
    }
    Eigen::MatrixXd dense = as_matrix(p);
    Eigen::LLT<Eigen::MatrixXd> llt(dense);
    if (llt.info() != Eigen::Success) {
        throw InvalidArgumentError(
            "MirrorMap::spd_linear: matrix is not positive definite");
    }
    MirrorMap m;
    m.kind = MapKind::SpdLinear;
    m.spd = std::move(p);
    return m;
}

MirrorMap MirrorMap::block_iaf(BlockIafParams iaf) {
    MirrorMap m;
    m.kind = MapKind::BlockIaf;
    m.iaf = std::move(iaf);
    return m;
}

namespace {

// Canonical parameter traversal. stage_map() walks the same structure in the
// same order; a unit test pins the two together.
template <typename Map, typename Tn, typename Fn>
void visit_params(Map& m, Fn&& fn) {
    switch (m.kind) {
        case MapKind::Identity:
            return;
        case MapKind::DiagonalLinear:
            fn("map.diag", static_cast<Tn>(m.diag));
            return;
        case MapKind::SpdLinear:
            fn("map.spd", static_cast<Tn>(m.spd));
            return;
        case MapKind::BlockIaf:
            break;
    }
    fn("map.iaf.seed_embedding", static_cast<Tn>(m.iaf.seed_embedding));
    for (std::size_t j = 0; j < m.iaf.encoders.size(); ++j) {
        auto& enc = m.iaf.encoders[j];
        for (std::size_t l = 0; l < enc.layers.size(); ++l) {
            auto& layer = enc.layers[l];
            const std::string base =
                "map.iaf.enc" + std::to_string(j) + ".l" + std::to_string(l);
            for (std::size_t f = 0; f < layer.factors.size(); ++f) {
                fn(base + ".f" + std::to_string(f), static_cast<Tn>(layer.factors[f]));
            }
            fn(base + ".b", static_cast<Tn>(layer.bias));
        }
    }
    for (std::size_t i = 0; i < m.iaf.decoders.size(); ++i) {
        auto& dec = m.iaf.decoders[i];
        const std::string base = "map.iaf.dec" + std::to_string(i);
        fn(base + ".w_in", static_cast<Tn>(dec.input_weight));
        fn(base + ".b_in", static_cast<Tn>(dec.input_bias));
        for (std::size_t l = 0; l < dec.layers.size(); ++l) {
            auto& layer = dec.layers[l];
            const std::string lbase = base + ".l" + std::to_string(l);
            for (std::size_t f = 0; f < layer.factors.size(); ++f) {
                fn(lbase + ".f" + std::to_string(f), static_cast<Tn>(layer.factors[f]));
            }
            fn(lbase + ".b", static_cast<Tn>(layer.bias));
        }
    }
}

}  // namespace

std::vector<Tensor*> MirrorMap::param_tensors() {
    std::vector<Tensor*> out;
    visit_params<MirrorMap, Tensor&>(*this,
                                     [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

std::vector<const Tensor*> MirrorMap::param_tensors() const {
    std::vector<const Tensor*> out;
    visit_params<const MirrorMap, const Tensor&>(
        *this, [&](const std::string&, const Tensor& t) { out.push_back(&t); });
    return out;
}

std::vector<std::string> MirrorMap::param_names() const {
    std::vector<std::string> out;
    visit_params<const MirrorMap, const Tensor&>(
        *this, [&](const std::string& name, const Tensor&) { out.push_back(name); });
    return out;
}

namespace {

StagedModeLinear stage_mode_linear(Graph& g, const ModeLinear& layer,
                                   std::vector<VarRef>& all) {
    StagedModeLinear s;
    for (const Tensor& f : layer.factors) {
        s.factors.push_back(g.constant(f));
        all.push_back(s.factors.back());
    }
    s.bias = g.constant(layer.bias);
    all.push_back(s.bias);
    return s;
}

// Indices of the scale (alpha) and shift (mu) halves within the flattened
// decoder output: the final layer doubles the last dimension, so alpha
// occupies the first half of every last-dim row.
void split_indices(const Shape& block_shape, IndexSet& alpha, IndexSet& mu) {
    const Index last = block_shape.back();
    const Index rows = shape_numel(block_shape) / last;
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < last; ++c) {
            alpha.push_back(r * 2 * last + c);
            mu.push_back(r * 2 * last + last + c);
        }
    }
}

VarRef mode_linear_forward(Graph& g, const StagedModeLinear& layer, VarRef x) {
    VarRef h = x;
    for (std::size_t m = 0; m < layer.factors.size(); ++m) {
        h = mode_product(g, h, layer.factors[m], static_cast<int>(m));
    }
    return add(g, h, layer.bias);
}

VarRef encoder_embed(Graph& g, const StagedEncoder& enc, VarRef block_tensor) {
    VarRef h = block_tensor;
    for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        h = mode_linear_forward(g, enc.layers[l], h);
        if (l + 1 < enc.layers.size()) h = relu(g, h);
    }
    return h;
}

VarRef decoder_forward(Graph& g, const StagedDecoder& dec, const Shape& s3,
                       VarRef input_vec) {
    const Index len = g.value(input_vec).numel();
    VarRef h = matmul(g, dec.input_weight, reshape(g, input_vec, {len, 1}));
    h = reshape(g, h, s3);
    h = relu(g, add(g, h, dec.input_bias));
    for (std::size_t l = 0; l < dec.layers.size(); ++l) {
        h = mode_linear_forward(g, dec.layers[l], h);
        if (l + 1 < dec.layers.size()) h = relu(g, h);
    }
    return h;
}

// Decoder input for block i given the flattened embeddings of blocks j < i.
VarRef decoder_input(Graph& g, const StagedMap& map,
                     const std::vector<VarRef>& flat_embeddings, std::size_t i) {
    if (i == 0) return map.seed_embedding;
    if (i == 1) return flat_embeddings[0];
    std::vector<VarRef> parts(flat_embeddings.begin(),
                              flat_embeddings.begin() + static_cast<long>(i));
    return concat(g, parts);
}

void check_partition_matches(const StagedMap& map, const Partition& partition) {
    if (map.kind != MapKind::BlockIaf) return;
    if (partition.blocks.size() != map.block_shapes.size()) {
        throw InvalidArgumentError(
            "map_forward: partition block count does not match map parameters");
    }
    for (std::size_t i = 0; i < map.block_shapes.size(); ++i) {
        if (shape_numel(map.block_shapes[i]) !=
            static_cast<Index>(partition.blocks[i]->size())) {
            throw InvalidArgumentError(
                "map_forward: partition block sizes do not match map parameters");
        }
    }
}

bool is_identity_layout(const Partition& partition) {
    Index expect = 0;
    for (const auto& b : partition.blocks) {
        for (Index idx : *b) {
            if (idx != expect++) return false;
        }
    }
    return true;
}

}  // namespace

StagedMap stage_map(Graph& g, const MirrorMap& map) {
    StagedMap s;
    s.kind = map.kind;
    switch (map.kind) {
        case MapKind::Identity:
            return s;
        case MapKind::DiagonalLinear:
            s.diag = g.constant(map.diag);
            s.all_params.push_back(s.diag);
            return s;
        case MapKind::SpdLinear:
            s.spd = g.constant(map.spd);
            s.all_params.push_back(s.spd);
            return s;
        case MapKind::BlockIaf:
            break;
    }
    s.block_shapes = map.iaf.block_shapes;
    s.seed_embedding = g.constant(map.iaf.seed_embedding);
    s.all_params.push_back(s.seed_embedding);
    for (const BlockEncoder& enc : map.iaf.encoders) {
        StagedEncoder se;
        for (const ModeLinear& layer : enc.layers) {
            se.layers.push_back(stage_mode_linear(g, layer, s.all_params));
        }
        s.encoders.push_back(std::move(se));
    }
    for (const BlockDecoder& dec : map.iaf.decoders) {
        StagedDecoder sd;
        sd.input_weight = g.constant(dec.input_weight);
        s.all_params.push_back(sd.input_weight);
        sd.input_bias = g.constant(dec.input_bias);
        s.all_params.push_back(sd.input_bias);
        for (const ModeLinear& layer : dec.layers) {
            sd.layers.push_back(stage_mode_linear(g, layer, s.all_params));
        }
        s.decoders.push_back(std::move(sd));
    }
    for (const Shape& shape : s.block_shapes) {
        auto alpha = std::make_shared<IndexSet>();
        auto mu = std::make_shared<IndexSet>();
        split_indices(shape, *alpha, *mu);
        s.alpha_idx.push_back(std::move(alpha));
        s.mu_idx.push_back(std::move(mu));
    }
    return s;
}

namespace {

// Shared forward pass over the staged block map; optionally reports the
// scale-logit nodes per block.
VarRef blockiaf_forward(Graph& g, StagedMap& map, const Partition& partition,
                        VarRef z, std::vector<VarRef>* alphas_out) {
    const std::size_t b = partition.blocks.size();

    std::vector<VarRef> z_blocks(b);
    for (std::size_t i = 0; i < b; ++i) {
        z_blocks[i] = gather(g, z, partition.blocks[i]);
    }

    std::vector<VarRef> flat_embeddings(b > 0 ? b - 1 : 0);
    for (std::size_t j = 0; j + 1 < b; ++j) {
        VarRef block_tensor = reshape(g, z_blocks[j], map.block_shapes[j]);
        VarRef emb = encoder_embed(g, map.encoders[j], block_tensor);
        flat_embeddings[j] = reshape(g, emb, {g.value(emb).numel()});
    }

    std::vector<VarRef> phi_blocks(b);
    for (std::size_t i = 0; i < b; ++i) {
        VarRef out;
        if (i == 0 && map.dec0_memo.valid()) {
            out = map.dec0_memo;
        } else {
            VarRef input = decoder_input(g, map, flat_embeddings, i);
            out = decoder_forward(g, map.decoders[i],
                                  halved_shape(map.block_shapes[i], 3), input);
            if (i == 0) map.dec0_memo = out;
        }
        VarRef flat = reshape(g, out, {g.value(out).numel()});
        VarRef alpha = gather(g, flat, map.alpha_idx[i]);
        VarRef mu = gather(g, flat, map.mu_idx[i]);
        if (alphas_out) alphas_out->push_back(alpha);
        phi_blocks[i] = add(g, mul(g, z_blocks[i], logistic(g, alpha)), mu);
    }

    VarRef stacked = b == 1 ? phi_blocks[0] : concat(g, phi_blocks);
    if (is_identity_layout(partition)) return stacked;

    // general partitions: route each block entry back to its coordinate
    const Index d = partition.total();
    auto inverse = std::make_shared<IndexSet>(static_cast<std::size_t>(d), 0);
    Index at = 0;
    for (const auto& block : partition.blocks) {
        for (Index idx : *block) {
            (*inverse)[static_cast<std::size_t>(idx)] = at++;
        }
    }
    return gather(g, stacked, std::move(inverse));
}

}  // namespace

VarRef map_forward(Graph& g, StagedMap& map, const Partition& partition, VarRef z) {
    const Index d = partition.total();
    if (g.value(z).numel() != d) {
        throw InvalidArgumentError("map_forward: input length " +
                                   std::to_string(g.value(z).numel()) +
                                   " does not match partition size " +
                                   std::to_string(d));
    }
    switch (map.kind) {
        case MapKind::Identity:
            return z;
        case MapKind::DiagonalLinear:
            if (g.value(map.diag).numel() != d) {
                throw InvalidArgumentError(
                    "map_forward: diagonal length does not match partition size");
            }
            return mul(g, z, map.diag);
        case MapKind::SpdLinear:
            if (g.value(map.spd).dim(0) != d) {
                throw InvalidArgumentError(
                    "map_forward: matrix size does not match partition size");
            }
            return reshape(g, matmul(g, map.spd, reshape(g, z, {d, 1})), {d});
        case MapKind::BlockIaf:
            check_partition_matches(map, partition);
            return blockiaf_forward(g, map, partition, z, nullptr);
    }
    throw InvalidArgumentError("map_forward: unknown map kind");
}

VarRef map_forward(Graph& g, const MirrorMap& map, const Partition& partition,
                   VarRef z) {
    StagedMap staged = stage_map(g, map);
    return map_forward(g, staged, partition, z);
}

Tensor map_apply(const MirrorMap& map, const Partition& partition, const Tensor& z) {
    Graph g;
    StagedMap staged = stage_map(g, map);
    return g.value(map_forward(g, staged, partition, g.constant(z)));
}

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor blockiaf_inverse(const MirrorMap& map, const Partition& partition,
                        const Tensor& phi) {
    Graph g;
    StagedMap staged = stage_map(g, map);
    check_partition_matches(staged, partition);

    const std::size_t b = partition.blocks.size();
    Tensor z = Tensor::zeros(phi.shape());
    std::vector<VarRef> flat_embeddings(b > 0 ? b - 1 : 0);

    for (std::size_t i = 0; i < b; ++i) {
        VarRef input = decoder_input(g, staged, flat_embeddings, i);
        VarRef out = decoder_forward(g, staged.decoders[i],
                                     halved_shape(staged.block_shapes[i], 3), input);
        VarRef flat = reshape(g, out, {g.value(out).numel()});
        const Tensor alpha = g.value(gather(g, flat, staged.alpha_idx[i]));
        const Tensor mu = g.value(gather(g, flat, staged.mu_idx[i]));

        const IndexSet& idx = *partition.blocks[i];
        Tensor z_block = Tensor::zeros({static_cast<Index>(idx.size())});
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const Index ik = static_cast<Index>(k);
            z_block[ik] = (phi[idx[k]] - mu[ik]) / sigmoid(alpha[ik]);
            z[idx[k]] = z_block[ik];
        }
        if (i + 1 < b) {
            VarRef block_tensor =
                reshape(g, g.constant(z_block), staged.block_shapes[i]);
            VarRef emb = encoder_embed(g, staged.encoders[i], block_tensor);
            flat_embeddings[i] = reshape(g, emb, {g.value(emb).numel()});
        }
    }
    return z;
}

}  // namespace

Tensor map_inverse(const MirrorMap& map, const Partition& partition,
                   const Tensor& phi) {
    const Index d = partition.total();
    if (phi.numel() != d) {
        throw InvalidArgumentError("map_inverse: input length does not match partition");
    }
    switch (map.kind) {
        case MapKind::Identity:
            return phi;
        case MapKind::DiagonalLinear: {
            Tensor z = Tensor::zeros(phi.shape());
            for (Index i = 0; i < d; ++i) z[i] = phi[i] / map.diag[i];
            return z;
        }
        case MapKind::SpdLinear: {
            Eigen::MatrixXd dense = as_matrix(map.spd);
            Eigen::VectorXd rhs =
                Eigen::Map<const Eigen::VectorXd>(phi.data(), phi.numel());
            Eigen::VectorXd solved = Eigen::LLT<Eigen::MatrixXd>(dense).solve(rhs);
            Tensor z = Tensor::zeros(phi.shape());
            Eigen::Map<Eigen::VectorXd>(z.data(), z.numel()) = solved;
            return z;
        }
        case MapKind::BlockIaf:
            return blockiaf_inverse(map, partition, phi);
    }
    throw InvalidArgumentError("map_inverse: unknown map kind");
}

double monotonicity_witness(const MirrorMap& map, const Partition& partition,
                            const Tensor& z, const Tensor& z_prime) {
    if (!z.same_shape(z_prime)) {
        throw InvalidArgumentError("monotonicity_witness: shapes differ");
    }
    bool distinct = false;
    for (Index i = 0; i < z.numel() && !distinct; ++i) {
        distinct = z[i] != z_prime[i];
    }
    if (!distinct) {
        throw InvalidArgumentError(
            "monotonicity_witness: inputs must be distinct points");
    }
    Graph g;
    StagedMap staged = stage_map(g, map);
    const Tensor a = g.value(map_forward(g, staged, partition, g.constant(z)));
    const Tensor b = g.value(map_forward(g, staged, partition, g.constant(z_prime)));
    double w = 0.0;
    for (Index i = 0; i < z.numel(); ++i) {
        w += (z[i] - z_prime[i]) * (a[i] - b[i]);
    }
    return w;
}

Tensor diag_scale(const MirrorMap& map, const Partition& partition,
                  const Tensor& z) {
    if (map.kind != MapKind::BlockIaf) {
        throw InvalidArgumentError("diag_scale: map kind must be block_iaf");
    }
    Graph g;
    StagedMap staged = stage_map(g, map);
    check_partition_matches(staged, partition);
    if (z.numel() != partition.total()) {
        throw InvalidArgumentError("diag_scale: input length does not match partition");
    }
    std::vector<VarRef> alphas;
    blockiaf_forward(g, staged, partition, g.constant(z), &alphas);
    Tensor out = Tensor::zeros(z.shape());
    for (std::size_t i = 0; i < partition.blocks.size(); ++i) {
        const Tensor& alpha = g.value(alphas[i]);
        const IndexSet& idx = *partition.blocks[i];
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out[idx[k]] = sigmoid(alpha[static_cast<Index>(k)]);
        }
    }
    return out;
}

}  // namespace metamirror
