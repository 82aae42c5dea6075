#pragma once

#include <vector>

#include "metamirror/mirror_map.hpp"
#include "metamirror/model.hpp"
#include "metamirror/tasks.hpp"

namespace metamirror {

struct InnerConfig {
    int steps = 5;           // K
    double step_size = 1e-2; // alpha
    bool record_trace = false;

    void validate() const;
};

struct TracePoint {
    double loss;
    double grad_norm;
};

// Result of one K-step adaptation. `adapted` stays differentiable with
// respect to whatever the initialization and map parameters were staged
// from, so the outer loop can take hypergradients through it. When traced,
// the trace has K+1 points: the training loss and primal gradient norm at
// every visited iterate including the initial and final ones.
struct AdaptResult {
    VarRef adapted;
    std::vector<TracePoint> trace;
};

// Plain K-step gradient descent on the training split.
AdaptResult gd_adapt(Graph& g, VarRef init, const FewShotTask& task,
                     const MlpSpec& spec, const InnerConfig& cfg);

// Diagonally preconditioned descent: each gradient coordinate is scaled by
// the (strictly positive) preconditioner before the step.
AdaptResult pgd_adapt(Graph& g, VarRef init, VarRef precond,
                      const FewShotTask& task, const MlpSpec& spec,
                      const InnerConfig& cfg);

// Dual-space mirror descent: the iterate lives in the dual; each step maps
// it to the primal, takes the primal training gradient there, and descends
// the dual vector. The final primal point is one more map application.
AdaptResult md_adapt(Graph& g, VarRef dual_init, StagedMap& map,
                     const Partition& partition, const FewShotTask& task,
                     const MlpSpec& spec, const InnerConfig& cfg);

}  // namespace metamirror
