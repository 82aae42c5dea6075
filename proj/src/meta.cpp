#include "metamirror/meta.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "metamirror/rng.hpp"

namespace metamirror {

const char* method_name(MethodTag tag) {
    switch (tag) {
        case MethodTag::Maml: return "maml";
        case MethodTag::MetaSgd: return "metasgd";
        case MethodTag::Mirror: return "mirror";
    }
    return "?";
}

MethodTag method_from_name(const std::string& name) {
    if (name == "maml") return MethodTag::Maml;
    if (name == "metasgd") return MethodTag::MetaSgd;
    if (name == "mirror") return MethodTag::Mirror;
    throw InvalidArgumentError("unknown method: " + name);
}

void MetaParams::validate(Index param_count) const {
    if (dual_init.numel() != param_count) {
        throw InvalidArgumentError("MetaParams: dual_init length " +
                                   std::to_string(dual_init.numel()) +
                                   " does not match model parameter count " +
                                   std::to_string(param_count));
    }
    const bool consistent =
        (method == MethodTag::Maml && map.kind == MapKind::Identity) ||
        (method == MethodTag::MetaSgd && map.kind == MapKind::DiagonalLinear) ||
        (method == MethodTag::Mirror && map.kind == MapKind::BlockIaf);
    if (!consistent) {
        throw InvalidArgumentError(std::string("MetaParams: map kind ") +
                                   map_kind_name(map.kind) +
                                   " is inconsistent with method " +
                                   method_name(method));
    }
}

std::vector<Tensor*> MetaParams::param_tensors() {
    std::vector<Tensor*> out{&dual_init};
    for (Tensor* t : map.param_tensors()) out.push_back(t);
    return out;
}

std::vector<const Tensor*> MetaParams::param_tensors() const {
    std::vector<const Tensor*> out{&dual_init};
    for (const Tensor* t : map.param_tensors()) out.push_back(t);
    return out;
}

std::vector<std::string> MetaParams::param_names() const {
    std::vector<std::string> out{"dual_init"};
    for (const std::string& n : map.param_names()) out.push_back(n);
    return out;
}

MetaParams init_meta_params(MethodTag method, const MlpSpec& spec,
                            const Partition& partition, std::uint64_t seed) {
    const Tensor phi0 = init_params(spec, derive_seed(seed, 0x6d6f64656cull, 0)).values;
    MetaParams p;
    p.method = method;
    switch (method) {
        case MethodTag::Maml:
            p.map = MirrorMap::identity();
            p.dual_init = phi0;
            break;
        case MethodTag::MetaSgd:
            p.map = MirrorMap::diagonal(Tensor::ones({phi0.numel()}));
            p.dual_init = phi0;  // unit preconditioner: dual == primal
            break;
        case MethodTag::Mirror: {
            p.map = MirrorMap::block_iaf(BlockIafParams::init(
                partition.block_shapes, derive_seed(seed, 0x6d6170ull, 0)));
            p.dual_init = map_inverse(p.map, partition, phi0);
            break;
        }
    }
    p.validate(spec.param_count());
    return p;
}

void MetaConfig::validate() const {
    if (outer_iters < 0) throw InvalidArgumentError("MetaConfig: outer_iters < 0");
    if (!(outer_step >= 0.0)) throw InvalidArgumentError("MetaConfig: outer_step < 0");
    if (batch_size < 1) throw InvalidArgumentError("MetaConfig: batch_size < 1");
    if (pool_size < batch_size) {
        throw InvalidArgumentError("MetaConfig: pool_size must be >= batch_size");
    }
    if (eval_tasks < 1) throw InvalidArgumentError("MetaConfig: eval_tasks < 1");
    if (workers < 1) throw InvalidArgumentError("MetaConfig: workers < 1");
    inner.validate();
}

void parallel_for(Index n, int workers, const std::function<void(Index)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (Index i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<Index> next{0};
    auto worker = [&] {
        for (;;) {
            const Index i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int count = static_cast<int>(std::min<Index>(workers, n));
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
}

namespace {

struct TaskGradients {
    bool diverged = false;
    double val_loss = 0.0;
    std::vector<Tensor> grads;  // aligned with MetaParams::param_tensors()
};

// Adapts one task and differentiates its validation loss back to the prior.
TaskGradients task_hypergradient(const MetaParams& params,
                                 const FewShotTask& task, const MlpSpec& spec,
                                 const Partition& partition,
                                 const InnerConfig& inner) {
    TaskGradients out;
    Graph g;
    VarRef z0 = g.constant(params.dual_init);
    StagedMap staged = stage_map(g, params.map);
    try {
        AdaptResult adapted = md_adapt(g, z0, staged, partition, task, spec, inner);
        VarRef val_loss = mlp_loss_on_split(g, spec, adapted.adapted,
                                            task.val_inputs, task.val_labels);
        out.val_loss = g.value(val_loss)[0];
        if (!std::isfinite(out.val_loss)) {
            throw DivergenceError(inner.steps, "validation loss is non-finite");
        }
        std::vector<VarRef> wrt{z0};
        for (VarRef p : staged.all_params) wrt.push_back(p);
        std::vector<VarRef> grads = grad(g, val_loss, wrt, /*create_graph=*/false);
        out.grads.reserve(grads.size());
        for (VarRef ref : grads) {
            const Tensor& gt = g.value(ref);
            if (!gt.all_finite()) {
                throw DivergenceError(inner.steps, "hypergradient is non-finite");
            }
            out.grads.push_back(gt);
        }
    } catch (const DivergenceError&) {
        out.diverged = true;
    }
    return out;
}

}  // namespace

MetaStepResult meta_step(MetaParams& params, const std::vector<FewShotTask>& batch,
                         const MlpSpec& spec, const Partition& partition,
                         const MetaConfig& cfg) {
    cfg.validate();
    params.validate(spec.param_count());
    if (batch.empty()) {
        throw InvalidArgumentError("meta_step: batch must be nonempty");
    }

    std::vector<TaskGradients> per_task(batch.size());
    parallel_for(static_cast<Index>(batch.size()), cfg.workers, [&](Index i) {
        per_task[static_cast<std::size_t>(i)] = task_hypergradient(
            params, batch[static_cast<std::size_t>(i)], spec, partition, cfg.inner);
    });

    std::vector<Tensor*> tensors = params.param_tensors();
    std::vector<Tensor> grad_sum;
    grad_sum.reserve(tensors.size());
    for (Tensor* t : tensors) grad_sum.push_back(Tensor::zeros(t->shape()));

    MetaStepResult result;
    double loss_sum = 0.0;
    for (const TaskGradients& tg : per_task) {  // fixed task order: deterministic
        if (tg.diverged) {
            ++result.diverged_tasks;
            continue;
        }
        ++result.adapted_tasks;
        loss_sum += tg.val_loss;
        for (std::size_t p = 0; p < grad_sum.size(); ++p) {
            grad_sum[p].array() += tg.grads[p].array();
        }
    }
    if (result.adapted_tasks == 0) {
        throw AllTasksDivergedError("meta_step: every task in the batch diverged");
    }

    const double scale = cfg.outer_step * static_cast<double>(cfg.pool_size) /
                         static_cast<double>(result.adapted_tasks);
    for (std::size_t p = 0; p < tensors.size(); ++p) {
        tensors[p]->array() -= scale * grad_sum[p].array();
    }
    result.mean_val_loss = loss_sum / result.adapted_tasks;
    return result;
}

MetaParams meta_train(MetaParams init, const TaskStream& stream,
                      const MlpSpec& spec, const Partition& partition,
                      const MetaConfig& cfg, const TraceSink& sink) {
    cfg.validate();
    MetaParams params = std::move(init);
    for (int r = 1; r <= cfg.outer_iters; ++r) {
        std::vector<FewShotTask> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int j = 0; j < cfg.batch_size; ++j) {
            batch.push_back(stream.task(
                static_cast<Index>(r - 1) * cfg.batch_size + j));
        }
        try {
            MetaStepResult step = meta_step(params, batch, spec, partition, cfg);
            if (sink) sink(r, step.mean_val_loss);
        } catch (const AllTasksDivergedError& e) {
            throw AllTasksDivergedError(
                "meta_train: all tasks diverged at outer iteration " +
                    std::to_string(r) + " (" + e.what() + ")",
                r);
        }
    }
    return params;
}

namespace {

struct TaskEval {
    bool diverged = false;
    double metric = 0.0;
    double val_loss = 0.0;
    std::vector<TracePoint> trace;
};

TaskEval evaluate_task(const MetaParams& params, const FewShotTask& task,
                       const MlpSpec& spec, const Partition& partition,
                       InnerConfig inner) {
    inner.record_trace = true;
    TaskEval out;
    Graph g;
    VarRef z0 = g.constant(params.dual_init);
    StagedMap staged = stage_map(g, params.map);
    try {
        AdaptResult adapted = md_adapt(g, z0, staged, partition, task, spec, inner);
        out.trace = adapted.trace;
        VarRef val_loss = mlp_loss_on_split(g, spec, adapted.adapted,
                                            task.val_inputs, task.val_labels);
        out.val_loss = g.value(val_loss)[0];
        if (!std::isfinite(out.val_loss)) {
            throw DivergenceError(inner.steps, "validation loss is non-finite");
        }
        if (spec.head == HeadKind::Classification) {
            VarRef logits = mlp_forward(g, spec, adapted.adapted,
                                        g.constant(task.val_inputs));
            const Tensor& lv = g.value(logits);
            const Index n = lv.dim(0), m = lv.dim(1);
            Index correct = 0;
            for (Index r = 0; r < n; ++r) {
                Index best = 0;
                for (Index c = 1; c < m; ++c) {
                    if (lv[r * m + c] > lv[r * m + best]) best = c;
                }
                if (best == static_cast<Index>(task.val_labels[r])) ++correct;
            }
            out.metric = static_cast<double>(correct) / static_cast<double>(n);
        } else {
            out.metric = out.val_loss;  // mean squared error
        }
    } catch (const DivergenceError&) {
        out.diverged = true;
    }
    return out;
}

}  // namespace

EvalReport evaluate(const MetaParams& params,
                    const std::vector<FewShotTask>& tasks, const MlpSpec& spec,
                    const Partition& partition, const InnerConfig& inner,
                    int workers) {
    if (tasks.empty()) {
        throw InvalidArgumentError("evaluate: tasks must be nonempty");
    }
    params.validate(spec.param_count());

    std::vector<TaskEval> evals(tasks.size());
    parallel_for(static_cast<Index>(tasks.size()), workers, [&](Index i) {
        evals[static_cast<std::size_t>(i)] = evaluate_task(
            params, tasks[static_cast<std::size_t>(i)], spec, partition, inner);
    });

    EvalReport report;
    report.classification = spec.head == HeadKind::Classification;
    report.mean_loss_per_k.assign(static_cast<std::size_t>(inner.steps) + 1, 0.0);
    report.mean_gradnorm_per_k.assign(static_cast<std::size_t>(inner.steps) + 1, 0.0);

    double sum = 0.0, sum_sq = 0.0, loss_sum = 0.0;
    for (const TaskEval& e : evals) {
        if (e.diverged) {
            ++report.diverged;
            continue;
        }
        ++report.task_count;
        sum += e.metric;
        sum_sq += e.metric * e.metric;
        loss_sum += e.val_loss;
        for (std::size_t k = 0; k < e.trace.size(); ++k) {
            report.mean_loss_per_k[k] += e.trace[k].loss;
            report.mean_gradnorm_per_k[k] += e.trace[k].grad_norm;
        }
    }
    if (report.task_count > 0) {
        const double n = static_cast<double>(report.task_count);
        report.mean_metric = sum / n;
        report.mean_val_loss = loss_sum / n;
        for (double& v : report.mean_loss_per_k) v /= n;
        for (double& v : report.mean_gradnorm_per_k) v /= n;
        if (report.task_count > 1) {
            const double var =
                std::max(0.0, (sum_sq - n * report.mean_metric * report.mean_metric) /
                                  (n - 1.0));
            report.ci_halfwidth = 1.96 * std::sqrt(var / n);
        }
    }
    return report;
}

EvalReport evaluate(const MetaParams& params, const TaskStream& stream,
                    int task_count, const MlpSpec& spec,
                    const Partition& partition, const InnerConfig& inner,
                    int workers) {
    if (task_count < 1) {
        throw InvalidArgumentError("evaluate: task_count must be >= 1");
    }
    std::vector<FewShotTask> tasks;
    tasks.reserve(static_cast<std::size_t>(task_count));
    for (int i = 0; i < task_count; ++i) {
        tasks.push_back(stream.task(i));
    }
    return evaluate(params, tasks, spec, partition, inner, workers);
}

}  // namespace metamirror
