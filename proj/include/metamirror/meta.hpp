#pragma once

#include <functional>
#include <string>
#include <vector>

#include "metamirror/inner_loop.hpp"
#include "metamirror/mirror_map.hpp"
#include "metamirror/model.hpp"
#include "metamirror/tasks.hpp"

namespace metamirror {

enum class MethodTag : std::uint8_t { Maml, MetaSgd, Mirror };

const char* method_name(MethodTag tag);
MethodTag method_from_name(const std::string& name);

// The full prior: the dual initialization plus whatever the map carries.
// Every method runs the same dual-space solver; maml's identity map makes
// the dual initialization the plain primal one.
struct MetaParams {
    MethodTag method = MethodTag::Maml;
    Tensor dual_init;
    MirrorMap map;

    void validate(Index param_count) const;
    std::vector<Tensor*> param_tensors();
    std::vector<const Tensor*> param_tensors() const;
    std::vector<std::string> param_names() const;
};

// Builds method-consistent initial parameters. The initial primal point is
// shared across methods: maml starts at phi0 directly, metasgd starts with a
// unit preconditioner, and the block map starts at its zero-decoder point
// with the dual initialization chosen so the mapped primal equals phi0.
MetaParams init_meta_params(MethodTag method, const MlpSpec& spec,
                            const Partition& partition, std::uint64_t seed);

struct MetaConfig {
    int outer_iters = 2000;   // R
    double outer_step = 1e-3; // beta
    int batch_size = 4;       // |T^(r)|
    int pool_size = 8;        // T, the nominal task-pool size in the scaling
    InnerConfig inner;
    int eval_tasks = 1000;
    std::uint64_t seed = 0;
    int workers = 1;

    void validate() const;
};

struct MetaStepResult {
    double mean_val_loss = 0.0;
    int adapted_tasks = 0;
    int diverged_tasks = 0;
};

// One outer update: adapts every task in the batch, sums hypergradients of
// the validation losses, scales by beta * T / |batch that adapted|, and
// descends the prior in place. Diverged tasks drop out of both the sum and
// the denominator; if nothing survives, AllTasksDivergedError.
MetaStepResult meta_step(MetaParams& params, const std::vector<FewShotTask>& batch,
                         const MlpSpec& spec, const Partition& partition,
                         const MetaConfig& cfg);

using TraceSink = std::function<void(int r, double mean_val_loss)>;

// Runs outer_iters meta-steps over freshly sampled batches from the stream.
MetaParams meta_train(MetaParams init, const TaskStream& stream,
                      const MlpSpec& spec, const Partition& partition,
                      const MetaConfig& cfg, const TraceSink& sink = {});

struct EvalReport {
    bool classification = false;
    double mean_metric = 0.0;   // MSE (regression) or accuracy (classification)
    double ci_halfwidth = 0.0;  // 1.96 * stderr
    double mean_val_loss = 0.0;
    int task_count = 0;
    int diverged = 0;
    std::vector<double> mean_loss_per_k;       // K+1 entries, training split
    std::vector<double> mean_gradnorm_per_k;   // K+1 entries
};

// Adapts the prior to each task's training split and scores the validation
// splits. Meta-test adaptation uses the same inner step size as training.
EvalReport evaluate(const MetaParams& params,
                    const std::vector<FewShotTask>& tasks, const MlpSpec& spec,
                    const Partition& partition, const InnerConfig& inner,
                    int workers = 1);

// Convenience: evaluates on `task_count` fresh tasks from the stream.
EvalReport evaluate(const MetaParams& params, const TaskStream& stream,
                    int task_count, const MlpSpec& spec,
                    const Partition& partition, const InnerConfig& inner,
                    int workers = 1);

// Deterministic helper: runs fn(i) for i in [0, n), optionally across
// threads; callers store per-index results so reductions stay ordered.
void parallel_for(Index n, int workers, const std::function<void(Index)>& fn);

}  // namespace metamirror
