#include "metamirror/inner_loop.hpp"

#include <cmath>

namespace metamirror {

void InnerConfig::validate() const {
    if (steps < 1) {
        throw InvalidArgumentError("InnerConfig: steps must be >= 1");
    }
    if (!(step_size >= 0.0)) {
        throw InvalidArgumentError("InnerConfig: step_size must be >= 0");
    }
}

namespace {

double l2_norm(const Tensor& t) {
    return std::sqrt(t.array().square().sum());
}

// Per-step bookkeeping shared by the three solvers: evaluates the training
// loss and its primal gradient at the current primal point, enforcing the
// divergence policy.
struct StepEval {
    VarRef loss;
    VarRef grad;
    double loss_value;
};

StepEval eval_step(Graph& g, const MlpSpec& spec, VarRef primal,
                   VarRef train_x, VarRef train_y, int k) {
    VarRef loss = mlp_loss(g, spec, primal, train_x, train_y);
    const double lv = g.value(loss)[0];
    if (!std::isfinite(lv)) {
        throw DivergenceError(k, "inner loss became non-finite at step " +
                                     std::to_string(k));
    }
    VarRef gvec = grad(g, loss, {primal})[0];
    if (!g.value(gvec).all_finite()) {
        throw DivergenceError(k, "inner gradient became non-finite at step " +
                                     std::to_string(k));
    }
    return StepEval{loss, gvec, lv};
}

void record(std::vector<TracePoint>& trace, const InnerConfig& cfg,
            const Graph& g, const StepEval& s) {
    if (cfg.record_trace) {
        trace.push_back(TracePoint{s.loss_value, l2_norm(g.value(s.grad))});
    }
}

}  // namespace

AdaptResult gd_adapt(Graph& g, VarRef init, const FewShotTask& task,
                     const MlpSpec& spec, const InnerConfig& cfg) {
    cfg.validate();
    VarRef train_x = g.constant(task.train_inputs);
    VarRef train_y = g.constant(task.train_labels);
    VarRef alpha = scalar_const(g, cfg.step_size);

    AdaptResult result;
    VarRef phi = init;
    for (int k = 0; k < cfg.steps; ++k) {
        StepEval s = eval_step(g, spec, phi, train_x, train_y, k);
        record(result.trace, cfg, g, s);
        phi = sub(g, phi, mul(g, alpha, s.grad));
    }
    StepEval s = eval_step(g, spec, phi, train_x, train_y, cfg.steps);
    record(result.trace, cfg, g, s);
    result.adapted = phi;
    return result;
}

AdaptResult pgd_adapt(Graph& g, VarRef init, VarRef precond,
                      const FewShotTask& task, const MlpSpec& spec,
                      const InnerConfig& cfg) {
    cfg.validate();
    const Tensor& p = g.value(precond);
    for (Index i = 0; i < p.numel(); ++i) {
        if (!(p[i] > 0.0)) {
            throw InvalidArgumentError(
                "pgd_adapt: preconditioner must be strictly positive");
        }
    }
    VarRef train_x = g.constant(task.train_inputs);
    VarRef train_y = g.constant(task.train_labels);
    VarRef alpha = scalar_const(g, cfg.step_size);

    AdaptResult result;
    VarRef phi = init;
    for (int k = 0; k < cfg.steps; ++k) {
        StepEval s = eval_step(g, spec, phi, train_x, train_y, k);
        record(result.trace, cfg, g, s);
        phi = sub(g, phi, mul(g, alpha, mul(g, precond, s.grad)));
    }
    StepEval s = eval_step(g, spec, phi, train_x, train_y, cfg.steps);
    record(result.trace, cfg, g, s);
    result.adapted = phi;
    return result;
}

AdaptResult md_adapt(Graph& g, VarRef dual_init, StagedMap& map,
                     const Partition& partition, const FewShotTask& task,
                     const MlpSpec& spec, const InnerConfig& cfg) {
    cfg.validate();
    VarRef train_x = g.constant(task.train_inputs);
    VarRef train_y = g.constant(task.train_labels);
    VarRef alpha = scalar_const(g, cfg.step_size);

    AdaptResult result;
    VarRef z = dual_init;
    for (int k = 0; k < cfg.steps; ++k) {
        VarRef phi = map_forward(g, map, partition, z);
        StepEval s = eval_step(g, spec, phi, train_x, train_y, k);
        record(result.trace, cfg, g, s);
        z = sub(g, z, mul(g, alpha, s.grad));
    }
    VarRef phi_hat = map_forward(g, map, partition, z);
    StepEval s = eval_step(g, spec, phi_hat, train_x, train_y, cfg.steps);
    record(result.trace, cfg, g, s);
    result.adapted = phi_hat;
    return result;
}

}  // namespace metamirror
