#include "metamirror/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "metamirror/csv.hpp"

namespace metamirror {

namespace {

constexpr const char* kMagic = "metamirror-checkpoint-v1";

std::string join_indices(const std::vector<Index>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

std::vector<Index> split_indices(const std::string& s) {
    std::vector<Index> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        out.push_back(static_cast<Index>(std::stoll(tok)));
    }
    return out;
}

const char* family_name(TaskFamily f) {
    return f == TaskFamily::Sinusoid ? "sinusoid" : "blobs";
}

TaskFamily family_from_name(const std::string& s) {
    if (s == "sinusoid") return TaskFamily::Sinusoid;
    if (s == "blobs") return TaskFamily::GaussianBlobs;
    throw CheckpointError("checkpoint: unknown task family " + s);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CheckpointError("cannot open checkpoint for writing: " + path);
    }
    out << kMagic << '\n';
    out << "method = " << method_name(ck.params.method) << '\n';
    out << "model.layers = " << join_indices(ck.spec.layer_sizes) << '\n';
    out << "model.head = "
        << (ck.spec.head == HeadKind::Regression ? "regression" : "classification")
        << '\n';
    std::vector<Index> block_sizes;
    for (const auto& b : ck.partition.blocks) {
        block_sizes.push_back(static_cast<Index>(b->size()));
    }
    out << "partition.block_sizes = " << join_indices(block_sizes) << '\n';
    out << "task.family = " << family_name(ck.task_cfg.family) << '\n';
    out << "task.classes = " << ck.task_cfg.class_count << '\n';
    out << "task.shots = " << ck.task_cfg.shots << '\n';
    out << "task.input_dim = " << ck.task_cfg.input_dim << '\n';
    out << "task.amplitude_lo = " << format_double(ck.task_cfg.amplitude_lo) << '\n';
    out << "task.amplitude_hi = " << format_double(ck.task_cfg.amplitude_hi) << '\n';
    out << "task.phase_lo = " << format_double(ck.task_cfg.phase_lo) << '\n';
    out << "task.phase_hi = " << format_double(ck.task_cfg.phase_hi) << '\n';
    out << "task.center_range = " << format_double(ck.task_cfg.center_range) << '\n';
    out << "task.cluster_spread = " << format_double(ck.task_cfg.cluster_spread)
        << '\n';
    out << "outer.iters = " << ck.meta_cfg.outer_iters << '\n';
    out << "outer.beta = " << format_double(ck.meta_cfg.outer_step) << '\n';
    out << "outer.batch = " << ck.meta_cfg.batch_size << '\n';
    out << "outer.pool = " << ck.meta_cfg.pool_size << '\n';
    out << "inner.steps = " << ck.meta_cfg.inner.steps << '\n';
    out << "inner.alpha = " << format_double(ck.meta_cfg.inner.step_size) << '\n';
    out << "eval.tasks = " << ck.meta_cfg.eval_tasks << '\n';
    out << "seed = " << ck.meta_cfg.seed << '\n';

    const auto tensors = ck.params.param_tensors();
    const auto names = ck.params.param_names();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        out << "tensor " << names[i] << ' ' << tensors[i]->numel() << '\n';
    }
    out << "data\n";
    for (const Tensor* t : tensors) {
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->numel() * sizeof(double)));
    }
    if (!out) {
        throw CheckpointError("failed while writing checkpoint: " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open checkpoint: " + path);
    }
    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw CheckpointError("not a checkpoint file: " + path);
    }

    std::map<std::string, std::string> kv;
    std::vector<std::pair<std::string, Index>> arrays;
    while (std::getline(in, line)) {
        if (line == "data") break;
        if (line.rfind("tensor ", 0) == 0) {
            std::istringstream is(line);
            std::string tag, name;
            Index len = 0;
            is >> tag >> name >> len;
            if (!is || len <= 0) {
                throw CheckpointError("malformed tensor entry: " + line);
            }
            arrays.emplace_back(name, len);
            continue;
        }
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw CheckpointError("malformed manifest line: " + line);
        }
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }

    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw CheckpointError("checkpoint manifest missing key: " + key);
        }
        return it->second;
    };

    Checkpoint ck;
    ck.spec.layer_sizes = split_indices(need("model.layers"));
    ck.spec.head = need("model.head") == "classification" ? HeadKind::Classification
                                                          : HeadKind::Regression;
    ck.spec.validate();
    ck.partition = partition_by_layer(ck.spec);

    const std::vector<Index> block_sizes = split_indices(need("partition.block_sizes"));
    if (block_sizes.size() != ck.partition.blocks.size()) {
        throw CheckpointError("checkpoint partition does not match model shape");
    }
    for (std::size_t i = 0; i < block_sizes.size(); ++i) {
        if (block_sizes[i] != static_cast<Index>(ck.partition.blocks[i]->size())) {
            throw CheckpointError("checkpoint partition does not match model shape");
        }
    }

    ck.task_cfg.family = family_from_name(need("task.family"));
    ck.task_cfg.class_count = std::stoi(need("task.classes"));
    ck.task_cfg.shots = std::stoi(need("task.shots"));
    ck.task_cfg.input_dim = std::stoi(need("task.input_dim"));
    ck.task_cfg.amplitude_lo = std::stod(need("task.amplitude_lo"));
    ck.task_cfg.amplitude_hi = std::stod(need("task.amplitude_hi"));
    ck.task_cfg.phase_lo = std::stod(need("task.phase_lo"));
    ck.task_cfg.phase_hi = std::stod(need("task.phase_hi"));
    ck.task_cfg.center_range = std::stod(need("task.center_range"));
    ck.task_cfg.cluster_spread = std::stod(need("task.cluster_spread"));
    ck.meta_cfg.outer_iters = std::stoi(need("outer.iters"));
    ck.meta_cfg.outer_step = std::stod(need("outer.beta"));
    ck.meta_cfg.batch_size = std::stoi(need("outer.batch"));
    ck.meta_cfg.pool_size = std::stoi(need("outer.pool"));
    ck.meta_cfg.inner.steps = std::stoi(need("inner.steps"));
    ck.meta_cfg.inner.step_size = std::stod(need("inner.alpha"));
    ck.meta_cfg.eval_tasks = std::stoi(need("eval.tasks"));
    ck.meta_cfg.seed = std::stoull(need("seed"));

    // Build a structurally matching parameter skeleton, then fill it from
    // the binary section.
    const Index d = ck.spec.param_count();
    ck.params.method = method_from_name(need("method"));
    ck.params.dual_init = Tensor::zeros({d});
    switch (ck.params.method) {
        case MethodTag::Maml:
            ck.params.map = MirrorMap::identity();
            break;
        case MethodTag::MetaSgd:
            ck.params.map.kind = MapKind::DiagonalLinear;
            ck.params.map.diag = Tensor::ones({d});
            break;
        case MethodTag::Mirror:
            ck.params.map.kind = MapKind::BlockIaf;
            ck.params.map.iaf = BlockIafParams::init(ck.partition.block_shapes, 0);
            break;
    }

    std::vector<Tensor*> tensors = ck.params.param_tensors();
    const std::vector<std::string> names = ck.params.param_names();
    if (arrays.size() != tensors.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(arrays.size()) +
                              " arrays, expected " + std::to_string(tensors.size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (arrays[i].first != names[i] || arrays[i].second != tensors[i]->numel()) {
            throw CheckpointError("checkpoint array " + arrays[i].first +
                                  " does not match expected " + names[i]);
        }
        in.read(reinterpret_cast<char*>(tensors[i]->data()),
                static_cast<std::streamsize>(tensors[i]->numel() * sizeof(double)));
        if (!in) {
            throw CheckpointError("checkpoint data section is truncated");
        }
    }
    return ck;
}

}  // namespace metamirror
