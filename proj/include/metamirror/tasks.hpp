#pragma once

#include <cstdint>
#include <string>

#include "metamirror/tensor.hpp"

namespace metamirror {

enum class TaskKind : std::uint8_t { Regression, Classification };

// One few-shot task: disjoint train and validation splits drawn from the
// same task-specific distribution.
struct FewShotTask {
    Tensor train_inputs;   // (N_trn x input_dim)
    Tensor train_labels;   // regression: (N_trn x 1); classification: (N_trn)
    Tensor val_inputs;     // (N_val x input_dim)
    Tensor val_labels;
    TaskKind kind = TaskKind::Regression;
};

enum class TaskFamily : std::uint8_t { Sinusoid, GaussianBlobs };

// Validation split size is fixed at 15 records per class.
inline constexpr int kValShotsPerClass = 15;

struct TaskFamilyConfig {
    TaskFamily family = TaskFamily::Sinusoid;
    int class_count = 5;  // M (classification only)
    int shots = 10;       // N per class (classification) / N train pairs (regression)
    int input_dim = 1;
    double amplitude_lo = 0.1;  // sinusoid
    double amplitude_hi = 5.0;
    double phase_lo = 0.0;
    double phase_hi = 3.141592653589793;
    double center_range = 5.0;    // blobs: cluster centers uniform in [-range, range]^dim
    double cluster_spread = 0.5;  // blobs: per-coordinate standard deviation

    void validate() const;  // throws InvalidArgumentError
};

// Samplers are pure functions of (config, seed): the same pair yields a
// bit-identical task.
FewShotTask sample_sinusoid_task(const TaskFamilyConfig& cfg, std::uint64_t seed);
FewShotTask sample_classification_task(const TaskFamilyConfig& cfg,
                                       std::uint64_t seed);
FewShotTask sample_task(const TaskFamilyConfig& cfg, std::uint64_t seed);

// A virtual task pool: task(i) derives a per-task seed from (base_seed,
// stream_tag, i). Distinct stream tags give disjoint pools, which is how
// meta-train and meta-test tasks are kept apart.
struct TaskStream {
    TaskFamilyConfig config;
    std::uint64_t base_seed = 0;
    std::uint64_t stream_tag = 0;

    FewShotTask task(Index i) const;
};

inline constexpr std::uint64_t kTrainStreamTag = 0;
inline constexpr std::uint64_t kEvalStreamTag = 1;

// Writes <path_stem>_train.csv and <path_stem>_val.csv, one record per row:
// x0,...,x{D-1},label.
void write_task_csv(const FewShotTask& task, const std::string& path_stem);

}  // namespace metamirror
