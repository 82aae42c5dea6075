#include "metamirror/tasks.hpp"

#include <cmath>

#include "metamirror/csv.hpp"
#include "metamirror/rng.hpp"

namespace metamirror {

void TaskFamilyConfig::validate() const {
    if (shots < 1) {
        throw InvalidArgumentError("task config: shots must be >= 1");
    }
    if (input_dim < 1) {
        throw InvalidArgumentError("task config: input_dim must be >= 1");
    }
    if (family == TaskFamily::Sinusoid) {
        if (input_dim != 1) {
            throw InvalidArgumentError("task config: sinusoid tasks have input_dim 1");
        }
        if (!(amplitude_lo > 0.0) || !(amplitude_hi > amplitude_lo)) {
            throw InvalidArgumentError("task config: amplitude range is degenerate");
        }
        if (!(phase_hi > phase_lo)) {
            throw InvalidArgumentError("task config: phase range is degenerate");
        }
    } else {
        if (class_count < 2) {
            throw InvalidArgumentError("task config: class_count must be >= 2");
        }
        if (!(center_range > 0.0)) {
            throw InvalidArgumentError("task config: center_range must be > 0");
        }
        if (cluster_spread < 0.0) {
            throw InvalidArgumentError("task config: cluster_spread must be >= 0");
        }
    }
}

FewShotTask sample_sinusoid_task(const TaskFamilyConfig& cfg, std::uint64_t seed) {
    if (cfg.family != TaskFamily::Sinusoid) {
        throw InvalidArgumentError("sample_sinusoid_task: config family is not sinusoid");
    }
    cfg.validate();
    Rng rng(seed);

    const double amplitude = rng.uniform(cfg.amplitude_lo, cfg.amplitude_hi);
    const double phase = rng.uniform(cfg.phase_lo, cfg.phase_hi);

    auto draw = [&](Index n) {
        Tensor x = Tensor::zeros({n, 1});
        Tensor y = Tensor::zeros({n, 1});
        for (Index i = 0; i < n; ++i) {
            const double xi = rng.uniform(-5.0, 5.0);
            x[i] = xi;
            y[i] = amplitude * std::sin(xi + phase);
        }
        return std::pair(std::move(x), std::move(y));
    };

    FewShotTask task;
    task.kind = TaskKind::Regression;
    auto [xt, yt] = draw(cfg.shots);
    auto [xv, yv] = draw(kValShotsPerClass);
    task.train_inputs = std::move(xt);
    task.train_labels = std::move(yt);
    task.val_inputs = std::move(xv);
    task.val_labels = std::move(yv);
    return task;
}

FewShotTask sample_classification_task(const TaskFamilyConfig& cfg,
                                       std::uint64_t seed) {
    if (cfg.family != TaskFamily::GaussianBlobs) {
        throw InvalidArgumentError(
            "sample_classification_task: config family is not gaussian-blobs");
    }
    cfg.validate();
    Rng rng(seed);

    const Index m = cfg.class_count;
    const Index dim = cfg.input_dim;

    Tensor centers = Tensor::zeros({m, dim});
    for (Index i = 0; i < centers.numel(); ++i) {
        centers[i] = rng.uniform(-cfg.center_range, cfg.center_range);
    }

    auto draw = [&](Index per_class) {
        Tensor x = Tensor::zeros({m * per_class, dim});
        Tensor y = Tensor::zeros({m * per_class});
        Index row = 0;
        for (Index c = 0; c < m; ++c) {
            for (Index s = 0; s < per_class; ++s, ++row) {
                for (Index d = 0; d < dim; ++d) {
                    x[row * dim + d] =
                        centers[c * dim + d] + cfg.cluster_spread * rng.normal();
                }
                y[row] = static_cast<double>(c);
            }
        }
        return std::pair(std::move(x), std::move(y));
    };

    FewShotTask task;
    task.kind = TaskKind::Classification;
    auto [xt, yt] = draw(cfg.shots);
    auto [xv, yv] = draw(kValShotsPerClass);
    task.train_inputs = std::move(xt);
    task.train_labels = std::move(yt);
    task.val_inputs = std::move(xv);
    task.val_labels = std::move(yv);
    return task;
}

FewShotTask sample_task(const TaskFamilyConfig& cfg, std::uint64_t seed) {
    return cfg.family == TaskFamily::Sinusoid
               ? sample_sinusoid_task(cfg, seed)
               : sample_classification_task(cfg, seed);
}

FewShotTask TaskStream::task(Index i) const {
    return sample_task(config,
                       derive_seed(base_seed, stream_tag,
                                   static_cast<std::uint64_t>(i)));
}

namespace {

void write_split_csv(const Tensor& inputs, const Tensor& labels,
                     const std::string& path) {
    const Index n = inputs.dim(0);
    const Index dim = inputs.dim(1);
    CsvWriter csv(path);
    std::vector<std::string> header;
    for (Index d = 0; d < dim; ++d) header.push_back("x" + std::to_string(d));
    header.push_back("label");
    csv.header(header);
    for (Index r = 0; r < n; ++r) {
        for (Index d = 0; d < dim; ++d) csv.cell(inputs[r * dim + d]);
        csv.cell(labels[r]);
        csv.end_row();
    }
}

}  // namespace

void write_task_csv(const FewShotTask& task, const std::string& path_stem) {
    write_split_csv(task.train_inputs, task.train_labels, path_stem + "_train.csv");
    write_split_csv(task.val_inputs, task.val_labels, path_stem + "_val.csv");
}

}  // namespace metamirror
