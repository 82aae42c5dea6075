#include <doctest.h>

#include <cmath>

#include "../support/test_util.hpp"
#include "metamirror/inner_loop.hpp"

using namespace metamirror;
namespace mt = metamirror::testing;

namespace {

// A linear model (1,1) on the two-point dataset {(1,0), (-1,0)} has
// MSE(w,b) = w^2 + b^2: a clean quadratic whose trajectories unroll by hand.
struct Quadratic {
    MlpSpec spec;
    FewShotTask task;
    Partition partition;

    Quadratic() {
        spec.layer_sizes = {1, 1};
        spec.head = HeadKind::Regression;
        task.kind = TaskKind::Regression;
        task.train_inputs = Tensor::from_values({2, 1}, {1.0, -1.0});
        task.train_labels = Tensor::zeros({2, 1});
        task.val_inputs = task.train_inputs;
        task.val_labels = task.train_labels;
        partition = partition_by_layer(spec);
    }
};

FewShotTask random_regression_task(Rng& rng, Index n, Index dim) {
    FewShotTask t;
    t.kind = TaskKind::Regression;
    t.train_inputs = mt::random_tensor({n, dim}, rng);
    t.train_labels = mt::random_tensor({n, 1}, rng);
    t.val_inputs = mt::random_tensor({n, dim}, rng);
    t.val_labels = mt::random_tensor({n, 1}, rng);
    return t;
}

MirrorMap random_block_map(const Partition& partition, std::uint64_t seed) {
    MirrorMap map =
        MirrorMap::block_iaf(BlockIafParams::init(partition.block_shapes, seed));
    Rng rng(seed * 31 + 7);
    for (Tensor* t : map.param_tensors()) {
        for (Index i = 0; i < t->numel(); ++i) (*t)[i] = rng.uniform(-0.7, 0.7);
    }
    return map;
}

}  // namespace

TEST_CASE("gradient descent on the quadratic follows the closed form") {
    Quadratic q;
    Graph g;
    InnerConfig cfg;

    SUBCASE("one step with alpha 1/2 lands at zero") {
        cfg.steps = 1;
        cfg.step_size = 0.5;
        VarRef init = g.constant(Tensor::from_values({2}, {1.0, 1.0}));
        AdaptResult r = gd_adapt(g, init, q.task, q.spec, cfg);
        CHECK(g.value(r.adapted)[0] == doctest::Approx(0.0));
        CHECK(g.value(r.adapted)[1] == doctest::Approx(0.0));
    }

    SUBCASE("zero step size keeps the initialization") {
        cfg.steps = 3;
        cfg.step_size = 0.0;
        VarRef init = g.constant(Tensor::from_values({2}, {0.7, -0.3}));
        AdaptResult r = gd_adapt(g, init, q.task, q.spec, cfg);
        CHECK(g.value(r.adapted)[0] == 0.7);
        CHECK(g.value(r.adapted)[1] == -0.3);
    }

    SUBCASE("two steps with alpha 1/4 contract by (1-1/2)^2") {
        cfg.steps = 2;
        cfg.step_size = 0.25;
        VarRef init = g.constant(Tensor::from_values({2}, {1.0, 1.0}));
        AdaptResult r = gd_adapt(g, init, q.task, q.spec, cfg);
        CHECK(g.value(r.adapted)[0] == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(g.value(r.adapted)[1] == doctest::Approx(0.25).epsilon(1e-15));
    }
}

TEST_CASE("trace has K+1 points of losses and gradient norms") {
    Quadratic q;
    Graph g;
    InnerConfig cfg;
    cfg.steps = 4;
    cfg.step_size = 0.1;
    cfg.record_trace = true;
    VarRef init = g.constant(Tensor::from_values({2}, {1.0, -1.0}));
    AdaptResult r = gd_adapt(g, init, q.task, q.spec, cfg);
    REQUIRE(r.trace.size() == 5);
    CHECK(r.trace[0].loss == doctest::Approx(2.0));  // w^2 + b^2 at (1,-1)
    // gradient (2w, 2b) at (1,-1) has norm sqrt(8)
    CHECK(r.trace[0].grad_norm == doctest::Approx(std::sqrt(8.0)));
    for (std::size_t k = 1; k < r.trace.size(); ++k) {
        CHECK(r.trace[k].loss <= r.trace[k - 1].loss);
    }
}

TEST_CASE("preconditioned descent") {
    Quadratic q;
    InnerConfig cfg;
    cfg.steps = 1;
    cfg.step_size = 0.5;

    SUBCASE("preconditioner of ones is plain descent, bit for bit") {
        cfg.steps = 5;
        cfg.step_size = 0.05;
        Graph g;
        VarRef init = g.constant(Tensor::from_values({2}, {0.9, -0.4}));
        VarRef ones = g.constant(Tensor::ones({2}));
        AdaptResult pgd = pgd_adapt(g, init, ones, q.task, q.spec, cfg);
        AdaptResult gd = gd_adapt(g, init, q.task, q.spec, cfg);
        CHECK(mt::max_abs_diff(g.value(pgd.adapted), g.value(gd.adapted)) <= 1e-12);
    }

    SUBCASE("half preconditioner halves the step") {
        Graph g;
        VarRef init = g.constant(Tensor::from_values({2}, {1.0, 1.0}));
        VarRef half = g.constant(Tensor::full({2}, 0.5));
        AdaptResult r = pgd_adapt(g, init, half, q.task, q.spec, cfg);
        // phi1 = 1 - 0.5 * 0.5 * 2 = 0.5 per coordinate
        CHECK(g.value(r.adapted)[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(g.value(r.adapted)[1] == doctest::Approx(0.5).epsilon(1e-15));
    }

    SUBCASE("nonpositive preconditioner is rejected") {
        Graph g;
        VarRef init = g.constant(Tensor::zeros({2}));
        VarRef bad = g.constant(Tensor::from_values({2}, {1.0, -1.0}));
        CHECK_THROWS_AS(pgd_adapt(g, init, bad, q.task, q.spec, cfg),
                        InvalidArgumentError);
    }
}

TEST_CASE("mirror descent reductions") {
    InnerConfig cfg;
    cfg.steps = 5;
    cfg.step_size = 1e-2;
    cfg.record_trace = true;

    SUBCASE("identity map reproduces plain descent exactly") {
        Rng rng(2024);
        const MlpSpec spec = [] {
            MlpSpec s;
            s.layer_sizes = {2, 4, 1};
            return s;
        }();
        const Partition partition = partition_by_layer(spec);
        for (int trial = 0; trial < 5; ++trial) {
            FewShotTask task = random_regression_task(rng, 6, 2);
            const Tensor phi0 =
                mt::random_tensor({spec.param_count()}, rng, -0.5, 0.5);

            Graph g;
            VarRef init = g.constant(phi0);
            StagedMap staged = stage_map(g, MirrorMap::identity());
            AdaptResult md = md_adapt(g, init, staged, partition, task, spec, cfg);
            AdaptResult gd = gd_adapt(g, init, task, spec, cfg);
            CHECK(mt::max_abs_diff(g.value(md.adapted), g.value(gd.adapted)) == 0.0);
            REQUIRE(md.trace.size() == gd.trace.size());
            for (std::size_t k = 0; k < md.trace.size(); ++k) {
                CHECK(md.trace[k].loss == gd.trace[k].loss);
                CHECK(md.trace[k].grad_norm == gd.trace[k].grad_norm);
            }
        }
    }

    SUBCASE("diagonal map matches the preconditioned trajectory") {
        Rng rng(515);
        const MlpSpec spec = [] {
            MlpSpec s;
            s.layer_sizes = {3, 5, 1};
            return s;
        }();
        const Partition partition = partition_by_layer(spec);
        for (int trial = 0; trial < 5; ++trial) {
            FewShotTask task = random_regression_task(rng, 7, 3);
            const Tensor p = mt::random_tensor({spec.param_count()}, rng, 0.3, 2.0);
            const Tensor phi0 =
                mt::random_tensor({spec.param_count()}, rng, -0.5, 0.5);
            MirrorMap map = MirrorMap::diagonal(p);
            const Tensor z0 = map_inverse(map, partition, phi0);

            Graph g;
            StagedMap staged = stage_map(g, map);
            AdaptResult md =
                md_adapt(g, g.constant(z0), staged, partition, task, spec, cfg);
            AdaptResult pgd =
                pgd_adapt(g, g.constant(phi0), g.constant(p), task, spec, cfg);
            CHECK(mt::max_abs_diff(g.value(md.adapted), g.value(pgd.adapted)) <=
                  1e-8);
            for (std::size_t k = 0; k < md.trace.size(); ++k) {
                CHECK(mt::rel_err(md.trace[k].loss, pgd.trace[k].loss) <= 1e-8);
            }
        }
    }

    SUBCASE("trace entry 0 is the loss at the mapped initialization") {
        Quadratic q;
        MirrorMap map = MirrorMap::diagonal(Tensor::from_values({2}, {2.0, 0.5}));
        Graph g;
        StagedMap staged = stage_map(g, map);
        const Tensor z0 = Tensor::from_values({2}, {0.5, 2.0});
        AdaptResult md = md_adapt(g, g.constant(z0), staged, q.partition, q.task,
                                  q.spec, cfg);
        // phi0 = (1, 1), loss = 2
        CHECK(md.trace[0].loss == doctest::Approx(2.0));
    }
}

TEST_CASE("zero-decoder block map on the quadratic unrolls by hand") {
    Quadratic q;
    BlockIafParams iaf = BlockIafParams::init(q.partition.block_shapes, 0);
    iaf.zero_all();
    MirrorMap map = MirrorMap::block_iaf(std::move(iaf));

    InnerConfig cfg;
    cfg.steps = 3;
    cfg.step_size = 0.2;

    const Tensor z0 = Tensor::from_values({2}, {1.0, -2.0});
    Graph g;
    StagedMap staged = stage_map(g, map);
    AdaptResult r = md_adapt(g, g.constant(z0), staged, q.partition, q.task,
                             q.spec, cfg);

    // hand-unrolled recursion: grad L at phi = 2 phi, phi = z/2, so
    // z_{k+1} = z_k - alpha * z_k = (1 - alpha) z_k and phi_hat = z_K / 2
    Tensor z = z0;
    for (int k = 0; k < cfg.steps; ++k) {
        for (Index i = 0; i < z.numel(); ++i) z[i] *= (1.0 - cfg.step_size);
    }
    for (Index i = 0; i < z.numel(); ++i) {
        CHECK(g.value(r.adapted)[i] == doctest::Approx(0.5 * z[i]).epsilon(1e-12));
    }
}

TEST_CASE("solvers are differentiable through the final loss") {
    Rng rng(808);
    const MlpSpec spec = [] {
        MlpSpec s;
        s.layer_sizes = {2, 3, 1};
        return s;
    }();
    const Partition partition = partition_by_layer(spec);
    const FewShotTask task = random_regression_task(rng, 5, 2);
    InnerConfig cfg;
    cfg.steps = 3;
    cfg.step_size = 0.05;
    const Index d = spec.param_count();
    const Tensor phi0 = mt::random_tensor({d}, rng, -0.6, 0.6);

    auto final_loss_gd = [&](const Tensor& init) {
        Graph g;
        AdaptResult r = gd_adapt(g, g.constant(init), task, spec, cfg);
        return g.value(mlp_loss_on_split(g, spec, r.adapted, task.val_inputs,
                                         task.val_labels))[0];
    };

    SUBCASE("gd") {
        Graph g;
        VarRef init = g.constant(phi0);
        AdaptResult r = gd_adapt(g, init, task, spec, cfg);
        VarRef vloss = mlp_loss_on_split(g, spec, r.adapted, task.val_inputs,
                                         task.val_labels);
        const Tensor analytic = g.value(grad(g, vloss, {init})[0]);
        const Tensor fd = mt::fd_gradient(final_loss_gd, phi0, 1e-5);
        CHECK(mt::max_rel_err(analytic, fd) <= 1e-3);
    }

    SUBCASE("pgd") {
        const Tensor p = mt::random_tensor({d}, rng, 0.4, 1.6);
        Graph g;
        VarRef init = g.constant(phi0);
        VarRef pc = g.constant(p);
        AdaptResult r = pgd_adapt(g, init, pc, task, spec, cfg);
        VarRef vloss = mlp_loss_on_split(g, spec, r.adapted, task.val_inputs,
                                         task.val_labels);
        const Tensor analytic = g.value(grad(g, vloss, {init})[0]);
        mt::ScalarFn f = [&](const Tensor& x) {
            Graph fresh;
            AdaptResult rr = pgd_adapt(fresh, fresh.constant(x),
                                       fresh.constant(p), task, spec, cfg);
            return fresh.value(mlp_loss_on_split(fresh, spec, rr.adapted,
                                                 task.val_inputs,
                                                 task.val_labels))[0];
        };
        CHECK(mt::max_rel_err(analytic, mt::fd_gradient(f, phi0, 1e-5)) <= 1e-3);
    }

    SUBCASE("md with a block map") {
        MirrorMap map = random_block_map(partition, 99);
        const Tensor z0 = map_inverse(map, partition, phi0);
        Graph g;
        VarRef init = g.constant(z0);
        StagedMap staged = stage_map(g, map);
        AdaptResult r = md_adapt(g, init, staged, partition, task, spec, cfg);
        VarRef vloss = mlp_loss_on_split(g, spec, r.adapted, task.val_inputs,
                                         task.val_labels);
        const Tensor analytic = g.value(grad(g, vloss, {init})[0]);
        mt::ScalarFn f = [&](const Tensor& x) {
            Graph fresh;
            StagedMap sm = stage_map(fresh, map);
            AdaptResult rr = md_adapt(fresh, fresh.constant(x), sm, partition,
                                      task, spec, cfg);
            return fresh.value(mlp_loss_on_split(fresh, spec, rr.adapted,
                                                 task.val_inputs,
                                                 task.val_labels))[0];
        };
        CHECK(mt::max_rel_err(analytic, mt::fd_gradient(f, z0, 1e-5)) <= 1e-3);
    }
}

TEST_CASE("mirror steps never materialize a d x d tensor") {
    MlpSpec spec;
    spec.layer_sizes = {1, 40, 40, 1};
    const Partition partition = partition_by_layer(spec);
    const Index d = spec.param_count();
    REQUIRE(d == 1761);

    Rng rng(1);
    FewShotTask task = random_regression_task(rng, 10, 1);
    InnerConfig cfg;
    cfg.steps = 2;
    cfg.step_size = 1e-2;

    Graph g;
    MirrorMap map = MirrorMap::block_iaf(
        BlockIafParams::init(partition.block_shapes, 3));
    StagedMap staged = stage_map(g, map);
    VarRef z0 = g.constant(map_inverse(map, partition, Tensor::zeros({d})));
    const std::size_t before = g.size();
    md_adapt(g, z0, staged, partition, task, spec, cfg);

    Index largest = 0;
    for (std::size_t i = before; i < g.size(); ++i) {
        largest = std::max(largest,
                           g.node(VarRef{static_cast<std::uint32_t>(i)}).value.numel());
    }
    CHECK(largest < d * d);
    CHECK(largest <= 4 * d);
}

TEST_CASE("divergence carries the failing step index") {
    Quadratic q;
    InnerConfig cfg;
    cfg.steps = 8;
    cfg.step_size = 1e160;
    Graph g;
    VarRef init = g.constant(Tensor::from_values({2}, {1.0, 1.0}));
    try {
        gd_adapt(g, init, q.task, q.spec, cfg);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step >= 1);
        CHECK(e.step <= 8);
    }
}

TEST_CASE("inner config validation") {
    InnerConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
    cfg.steps = 1;
    cfg.step_size = -0.1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
    cfg.step_size = 0.0;  // explicitly allowed: a no-op adaptation
    CHECK_NOTHROW(cfg.validate());
}
