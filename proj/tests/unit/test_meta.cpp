#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "../support/test_util.hpp"
#include "metamirror/checkpoint.hpp"
#include "metamirror/meta.hpp"

using namespace metamirror;
namespace mt = metamirror::testing;

namespace {

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
        task.val_inputs = Tensor::from_values({2, 1}, {0.5, -0.5});
        task.val_labels = Tensor::zeros({2, 1});
        partition = partition_by_layer(spec);
    }
};

bool params_equal(const MetaParams& a, const MetaParams& b) {
    const auto ta = a.param_tensors();
    const auto tb = b.param_tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (mt::max_abs_diff(*ta[i], *tb[i]) != 0.0) return false;
    }
    return true;
}

MetaConfig small_config(int iters, std::uint64_t seed) {
    MetaConfig cfg;
    cfg.outer_iters = iters;
    cfg.outer_step = 1e-2;
    cfg.batch_size = 2;
    cfg.pool_size = 2;
    cfg.inner.steps = 2;
    cfg.inner.step_size = 0.05;
    cfg.eval_tasks = 8;
    cfg.seed = seed;
    return cfg;
}

TaskFamilyConfig small_sinusoid() {
    TaskFamilyConfig t;
    t.family = TaskFamily::Sinusoid;
    t.shots = 5;
    t.amplitude_lo = 0.5;
    t.amplitude_hi = 2.0;
    return t;
}

}  // namespace

TEST_CASE("zero outer step leaves the parameters untouched") {
    Quadratic q;
    MetaParams params = init_meta_params(MethodTag::Maml, q.spec, q.partition, 5);
    MetaParams before = params;
    MetaConfig cfg = small_config(1, 5);
    cfg.outer_step = 0.0;
    meta_step(params, {q.task, q.task}, q.spec, q.partition, cfg);
    CHECK(params_equal(params, before));
}

TEST_CASE("hypergradient matches finite differences on the quadratic") {
    Quadratic q;
    MetaConfig cfg = small_config(1, 0);
    cfg.inner.steps = 1;
    cfg.inner.step_size = 0.1;
    cfg.outer_step = 1.0;
    cfg.batch_size = 1;
    cfg.pool_size = 1;

    MetaParams params = init_meta_params(MethodTag::Maml, q.spec, q.partition, 9);
    params.dual_init = Tensor::from_values({2}, {0.8, -0.6});

    MetaParams stepped = params;
    meta_step(stepped, {q.task}, q.spec, q.partition, cfg);
    // with beta = 1 and T/|batch| = 1, the update IS the hypergradient
    Tensor update = Tensor::zeros({2});
    for (Index i = 0; i < 2; ++i) {
        update[i] = params.dual_init[i] - stepped.dual_init[i];
    }

    mt::ScalarFn f = [&](const Tensor& theta) {
        Graph g;
        StagedMap staged = stage_map(g, params.map);
        AdaptResult r = md_adapt(g, g.constant(theta), staged, q.partition,
                                 q.task, q.spec, cfg.inner);
        return g.value(mlp_loss_on_split(g, q.spec, r.adapted, q.task.val_inputs,
                                         q.task.val_labels))[0];
    };
    const Tensor fd = mt::fd_gradient(f, params.dual_init, 1e-4);
    CHECK(mt::max_rel_err(update, fd) <= 1e-3);
}

TEST_CASE("batch duplication is compensated by the pool scaling") {
    Quadratic q;
    TaskFamilyConfig fam = small_sinusoid();
    TaskStream stream{fam, 77, kTrainStreamTag};
    MlpSpec spec;
    spec.layer_sizes = {1, 3, 1};
    Partition partition = partition_by_layer(spec);
    std::vector<FewShotTask> batch{stream.task(0), stream.task(1)};
    std::vector<FewShotTask> doubled{stream.task(0), stream.task(1),
                                     stream.task(0), stream.task(1)};

    MetaConfig cfg = small_config(1, 3);
    cfg.pool_size = 8;  // fixed pool, varying batch size

    MetaParams a = init_meta_params(MethodTag::Maml, spec, partition, 21);
    MetaParams b = a;
    cfg.batch_size = 2;
    meta_step(a, batch, spec, partition, cfg);
    cfg.batch_size = 4;
    meta_step(b, doubled, spec, partition, cfg);
    CHECK(mt::max_abs_diff(a.dual_init, b.dual_init) <= 1e-10);
}

TEST_CASE("permuting the batch does not change the update") {
    TaskFamilyConfig fam = small_sinusoid();
    TaskStream stream{fam, 31, kTrainStreamTag};
    MlpSpec spec;
    spec.layer_sizes = {1, 3, 1};
    Partition partition = partition_by_layer(spec);
    std::vector<FewShotTask> batch{stream.task(0), stream.task(1), stream.task(2)};
    std::vector<FewShotTask> permuted{stream.task(2), stream.task(0), stream.task(1)};

    MetaConfig cfg = small_config(1, 3);
    cfg.batch_size = 3;
    cfg.pool_size = 3;
    MetaParams a = init_meta_params(MethodTag::MetaSgd, spec, partition, 4);
    MetaParams b = a;
    meta_step(a, batch, spec, partition, cfg);
    meta_step(b, permuted, spec, partition, cfg);
    const auto ta = a.param_tensors();
    const auto tb = b.param_tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(mt::max_abs_diff(*ta[i], *tb[i]) <= 1e-12);
    }
}

TEST_CASE("maml meta-step reproduces the classical update") {
    TaskFamilyConfig fam = small_sinusoid();
    TaskStream stream{fam, 55, kTrainStreamTag};
    MlpSpec spec;
    spec.layer_sizes = {1, 4, 1};
    Partition partition = partition_by_layer(spec);
    std::vector<FewShotTask> batch{stream.task(0), stream.task(1)};

    MetaConfig cfg = small_config(1, 1);
    cfg.batch_size = 2;
    cfg.pool_size = 2;

    MetaParams params = init_meta_params(MethodTag::Maml, spec, partition, 19);
    MetaParams stepped = params;
    meta_step(stepped, batch, spec, partition, cfg);

    // classical route: adapt with plain gd, differentiate the validation
    // loss with respect to the initialization, average, and descend
    Tensor grad_sum = Tensor::zeros(params.dual_init.shape());
    for (const FewShotTask& task : batch) {
        Graph g;
        VarRef init = g.constant(params.dual_init);
        AdaptResult r = gd_adapt(g, init, task, spec, cfg.inner);
        VarRef vloss = mlp_loss_on_split(g, spec, r.adapted, task.val_inputs,
                                         task.val_labels);
        grad_sum.array() += g.value(grad(g, vloss, {init})[0]).array();
    }
    Tensor expect = params.dual_init;
    expect.array() -=
        (cfg.outer_step * cfg.pool_size / static_cast<double>(batch.size())) *
        grad_sum.array();
    CHECK(mt::max_abs_diff(stepped.dual_init, expect) <= 1e-12);
}

TEST_CASE("meta_train basics") {
    TaskFamilyConfig fam = small_sinusoid();
    TaskStream stream{fam, 9, kTrainStreamTag};
    MlpSpec spec;
    spec.layer_sizes = {1, 3, 1};
    Partition partition = partition_by_layer(spec);

    SUBCASE("zero iterations returns the initialization") {
        MetaConfig cfg = small_config(0, 9);
        MetaParams init = init_meta_params(MethodTag::Mirror, spec, partition, 2);
        MetaParams out = meta_train(init, stream, spec, partition, cfg);
        CHECK(params_equal(out, init));
    }

    SUBCASE("fixed seed gives bit-identical runs and sink rows") {
        MetaConfig cfg = small_config(5, 9);
        std::vector<double> losses_a, losses_b;
        MetaParams a = meta_train(
            init_meta_params(MethodTag::Mirror, spec, partition, 2), stream, spec,
            partition, cfg, [&](int, double l) { losses_a.push_back(l); });
        MetaParams b = meta_train(
            init_meta_params(MethodTag::Mirror, spec, partition, 2), stream, spec,
            partition, cfg, [&](int, double l) { losses_b.push_back(l); });
        CHECK(params_equal(a, b));
        REQUIRE(losses_a.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(losses_a[i] == losses_b[i]);
        }
    }

    SUBCASE("worker threads do not change the result") {
        MetaConfig cfg = small_config(3, 9);
        cfg.batch_size = 4;
        cfg.pool_size = 4;
        MetaParams a = meta_train(
            init_meta_params(MethodTag::Mirror, spec, partition, 2), stream, spec,
            partition, cfg);
        cfg.workers = 3;
        MetaParams b = meta_train(
            init_meta_params(MethodTag::Mirror, spec, partition, 2), stream, spec,
            partition, cfg);
        CHECK(params_equal(a, b));
    }
}

TEST_CASE("all-diverged batches raise a typed error") {
    Quadratic q;
    MetaConfig cfg = small_config(1, 0);
    cfg.inner.step_size = 1e160;
    MetaParams params = init_meta_params(MethodTag::Maml, q.spec, q.partition, 5);
    CHECK_THROWS_AS(meta_step(params, {q.task, q.task}, q.spec, q.partition, cfg),
                    AllTasksDivergedError);
}

TEST_CASE("evaluate") {
    SUBCASE("oracle parameters on near-zero-amplitude tasks give zero error") {
        TaskFamilyConfig fam;
        fam.family = TaskFamily::Sinusoid;
        fam.shots = 5;
        fam.amplitude_lo = 1e-13;
        fam.amplitude_hi = 2e-13;
        MlpSpec spec;
        spec.layer_sizes = {1, 3, 1};
        Partition partition = partition_by_layer(spec);
        MetaParams oracle = init_meta_params(MethodTag::Maml, spec, partition, 0);
        oracle.dual_init = Tensor::zeros({spec.param_count()});  // predicts 0
        InnerConfig inner;
        inner.steps = 3;
        inner.step_size = 1e-2;
        TaskStream stream{fam, 123, kEvalStreamTag};
        EvalReport rep = evaluate(oracle, stream, 20, spec, partition, inner);
        CHECK(rep.task_count == 20);
        CHECK(rep.mean_metric <= 1e-18);
        CHECK(rep.ci_halfwidth <= 1e-18);
    }

    SUBCASE("random parameters on five classes sit at chance accuracy") {
        TaskFamilyConfig fam;
        fam.family = TaskFamily::GaussianBlobs;
        fam.class_count = 5;
        fam.shots = 5;
        fam.input_dim = 4;
        MlpSpec spec;
        spec.layer_sizes = {4, 8, 5};
        spec.head = HeadKind::Classification;
        Partition partition = partition_by_layer(spec);
        MetaParams params = init_meta_params(MethodTag::Maml, spec, partition, 7);
        InnerConfig inner;
        inner.steps = 1;
        inner.step_size = 0.0;  // no adaptation: pure random guessing
        TaskStream stream{fam, 5, kEvalStreamTag};
        EvalReport rep = evaluate(params, stream, 60, spec, partition, inner);
        CHECK(rep.classification);
        CHECK(rep.mean_metric >= 0.0);
        CHECK(rep.mean_metric <= 1.0);
        CHECK(std::abs(rep.mean_metric - 0.2) < 0.06);
    }

    SUBCASE("trace arrays have K+1 entries, entry 0 pre-adaptation") {
        TaskFamilyConfig fam = small_sinusoid();
        MlpSpec spec;
        spec.layer_sizes = {1, 3, 1};
        Partition partition = partition_by_layer(spec);
        MetaParams params = init_meta_params(MethodTag::Mirror, spec, partition, 3);
        InnerConfig inner;
        inner.steps = 4;
        inner.step_size = 1e-2;
        TaskStream stream{fam, 77, kEvalStreamTag};
        EvalReport rep = evaluate(params, stream, 10, spec, partition, inner);
        REQUIRE(rep.mean_loss_per_k.size() == 5);
        REQUIRE(rep.mean_gradnorm_per_k.size() == 5);

        // entry 0 equals the mean loss at the mapped initialization
        double pre = 0.0;
        for (int i = 0; i < 10; ++i) {
            FewShotTask task = stream.task(i);
            Graph g;
            VarRef phi0 = map_forward(g, params.map, partition,
                                      g.constant(params.dual_init));
            pre += g.value(mlp_loss_on_split(g, spec, phi0, task.train_inputs,
                                             task.train_labels))[0];
        }
        pre /= 10.0;
        CHECK(rep.mean_loss_per_k[0] == doctest::Approx(pre).epsilon(1e-12));
    }
}

TEST_CASE("meta params validation ties method to map kind") {
    MlpSpec spec;
    spec.layer_sizes = {1, 3, 1};
    Partition partition = partition_by_layer(spec);
    MetaParams p = init_meta_params(MethodTag::Maml, spec, partition, 1);
    p.method = MethodTag::Mirror;
    CHECK_THROWS_AS(p.validate(spec.param_count()), InvalidArgumentError);
    p = init_meta_params(MethodTag::Mirror, spec, partition, 1);
    CHECK_NOTHROW(p.validate(spec.param_count()));
    p.dual_init = Tensor::zeros({3});
    CHECK_THROWS_AS(p.validate(spec.param_count()), InvalidArgumentError);
}

TEST_CASE("mirror initialization starts at the shared primal point") {
    MlpSpec spec;
    spec.layer_sizes = {1, 4, 1};
    Partition partition = partition_by_layer(spec);
    MetaParams maml = init_meta_params(MethodTag::Maml, spec, partition, 11);
    MetaParams mirror = init_meta_params(MethodTag::Mirror, spec, partition, 11);
    const Tensor phi_mirror = map_apply(mirror.map, partition, mirror.dual_init);
    CHECK(mt::max_abs_diff(phi_mirror, maml.dual_init) <= 1e-9);
}

TEST_CASE("checkpoint round trip is bit exact") {
    TaskFamilyConfig fam = small_sinusoid();
    MlpSpec spec;
    spec.layer_sizes = {1, 3, 1};
    Partition partition = partition_by_layer(spec);
    MetaConfig cfg = small_config(2, 42);
    TaskStream stream{fam, cfg.seed, kTrainStreamTag};
    MetaParams trained = meta_train(
        init_meta_params(MethodTag::Mirror, spec, partition, cfg.seed), stream,
        spec, partition, cfg);

    const std::string path = "/tmp/metamirror_ck_test.mmc";
    Checkpoint ck{trained, spec, partition, cfg, fam};
    save_checkpoint(path, ck);
    Checkpoint loaded = load_checkpoint(path);

    CHECK(loaded.params.method == MethodTag::Mirror);
    CHECK(params_equal(loaded.params, trained));
    CHECK(loaded.spec.layer_sizes == spec.layer_sizes);
    CHECK(loaded.meta_cfg.inner.steps == cfg.inner.steps);
    CHECK(loaded.task_cfg.shots == fam.shots);

    const std::string path2 = "/tmp/metamirror_ck_test2.mmc";
    save_checkpoint(path2, loaded);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string bytes_a((std::istreambuf_iterator<char>(a)),
                        std::istreambuf_iterator<char>());
    std::string bytes_b((std::istreambuf_iterator<char>(b)),
                        std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
    std::remove(path.c_str());
    std::remove(path2.c_str());

    SUBCASE("truncated checkpoints are rejected") {
        const std::string bad = "/tmp/metamirror_ck_bad.mmc";
        std::ofstream out(bad, std::ios::binary);
        out << bytes_a.substr(0, bytes_a.size() / 2);
        out.close();
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
        std::remove(bad.c_str());
    }
}
