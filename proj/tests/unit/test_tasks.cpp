#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "../support/test_util.hpp"
#include "metamirror/tasks.hpp"

using namespace metamirror;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (Index i = 0; i < a.numel(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("sinusoid label formula") {
    // the generating family: y = a sin(x + b)
    CHECK(1.0 * std::sin(3.141592653589793 / 2.0 + 0.0) == doctest::Approx(1.0));
    CHECK(2.0 * std::sin(0.0 + 3.141592653589793) ==
          doctest::Approx(0.0).epsilon(1e-12));

    // and through the sampler, via a near-degenerate amplitude/phase range
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::Sinusoid;
    cfg.shots = 20;
    cfg.amplitude_lo = 0.999;
    cfg.amplitude_hi = 1.001;
    cfg.phase_lo = 0.0;
    cfg.phase_hi = 1e-9;
    FewShotTask task = sample_sinusoid_task(cfg, 42);
    for (Index i = 0; i < task.train_inputs.dim(0); ++i) {
        const double x = task.train_inputs[i];
        CHECK(std::abs(x) <= 5.0);
        CHECK(std::abs(task.train_labels[i] - std::sin(x)) <= 0.01);
    }
}

TEST_CASE("sinusoid split sizes and determinism") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::Sinusoid;
    cfg.shots = 10;
    FewShotTask a = sample_sinusoid_task(cfg, 7);
    CHECK(a.train_inputs.shape() == Shape{10, 1});
    CHECK(a.val_inputs.shape() == Shape{15, 1});
    CHECK(a.kind == TaskKind::Regression);

    FewShotTask b = sample_sinusoid_task(cfg, 7);
    CHECK(tensors_equal(a.train_inputs, b.train_inputs));
    CHECK(tensors_equal(a.train_labels, b.train_labels));
    CHECK(tensors_equal(a.val_inputs, b.val_inputs));
    CHECK(tensors_equal(a.val_labels, b.val_labels));

    FewShotTask c = sample_sinusoid_task(cfg, 8);
    CHECK(!tensors_equal(a.train_inputs, c.train_inputs));
}

TEST_CASE("classification split rule |train| = M*N, 15 val per class") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::GaussianBlobs;
    cfg.input_dim = 3;

    cfg.class_count = 5;
    cfg.shots = 1;
    FewShotTask t = sample_classification_task(cfg, 11);
    CHECK(t.train_inputs.shape() == Shape{5, 3});
    CHECK(t.val_inputs.shape() == Shape{75, 3});
    CHECK(t.kind == TaskKind::Classification);

    cfg.class_count = 2;
    cfg.shots = 5;
    t = sample_classification_task(cfg, 11);
    CHECK(t.train_inputs.shape() == Shape{10, 3});
    CHECK(t.val_inputs.shape() == Shape{30, 3});
}

TEST_CASE("class balance") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::GaussianBlobs;
    cfg.class_count = 4;
    cfg.shots = 3;
    cfg.input_dim = 2;
    FewShotTask t = sample_classification_task(cfg, 123);
    std::vector<int> train_counts(4, 0), val_counts(4, 0);
    for (Index i = 0; i < t.train_labels.numel(); ++i) {
        ++train_counts[static_cast<std::size_t>(t.train_labels[i])];
    }
    for (Index i = 0; i < t.val_labels.numel(); ++i) {
        ++val_counts[static_cast<std::size_t>(t.val_labels[i])];
    }
    for (int c = 0; c < 4; ++c) {
        CHECK(train_counts[static_cast<std::size_t>(c)] == 3);
        CHECK(val_counts[static_cast<std::size_t>(c)] == kValShotsPerClass);
    }
}

TEST_CASE("zero cluster spread degenerates to the class centers") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::GaussianBlobs;
    cfg.class_count = 3;
    cfg.shots = 4;
    cfg.input_dim = 2;
    cfg.cluster_spread = 0.0;
    FewShotTask t = sample_classification_task(cfg, 5);
    // every point of a class equals that class's first point
    for (Index r = 0; r < t.train_inputs.dim(0); ++r) {
        const Index c = static_cast<Index>(t.train_labels[r]);
        const Index first = c * cfg.shots;
        for (Index d = 0; d < 2; ++d) {
            CHECK(t.train_inputs[r * 2 + d] == t.train_inputs[first * 2 + d]);
        }
    }
}

TEST_CASE("train and validation records are distinct draws") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::GaussianBlobs;
    cfg.class_count = 3;
    cfg.shots = 5;
    cfg.input_dim = 4;
    FewShotTask t = sample_classification_task(cfg, 99);
    std::set<std::string> train_rows;
    for (Index r = 0; r < t.train_inputs.dim(0); ++r) {
        std::string key;
        for (Index d = 0; d < 4; ++d) {
            key += std::to_string(t.train_inputs[r * 4 + d]) + "|";
        }
        train_rows.insert(key);
    }
    for (Index r = 0; r < t.val_inputs.dim(0); ++r) {
        std::string key;
        for (Index d = 0; d < 4; ++d) {
            key += std::to_string(t.val_inputs[r * 4 + d]) + "|";
        }
        CHECK(train_rows.find(key) == train_rows.end());
    }
}

TEST_CASE("task streams with different tags are disjoint pools") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::Sinusoid;
    cfg.shots = 5;
    TaskStream train{cfg, 1234, kTrainStreamTag};
    TaskStream eval{cfg, 1234, kEvalStreamTag};
    CHECK(!tensors_equal(train.task(0).train_inputs, eval.task(0).train_inputs));
    CHECK(tensors_equal(train.task(3).train_inputs, train.task(3).train_inputs));
}

TEST_CASE("config validation") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::Sinusoid;
    cfg.shots = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
    cfg.shots = 5;
    cfg.amplitude_hi = cfg.amplitude_lo;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
    cfg = TaskFamilyConfig{};
    cfg.family = TaskFamily::GaussianBlobs;
    cfg.input_dim = 2;
    cfg.class_count = 1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgumentError);
}

TEST_CASE("task CSV dump") {
    TaskFamilyConfig cfg;
    cfg.family = TaskFamily::Sinusoid;
    cfg.shots = 4;
    FewShotTask t = sample_sinusoid_task(cfg, 3);
    const std::string stem = "/tmp/metamirror_task_dump";
    write_task_csv(t, stem);

    std::ifstream in(stem + "_train.csv");
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "x0,label");
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 4);
    std::remove((stem + "_train.csv").c_str());
    std::remove((stem + "_val.csv").c_str());
}
