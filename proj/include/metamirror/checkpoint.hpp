#pragma once

#include <string>

#include "metamirror/meta.hpp"

namespace metamirror {

// Everything needed to resume or evaluate a trained prior: a text manifest
// (method, model shape, partition sizes, meta configuration, task family)
// followed by the named parameter arrays as raw little-endian doubles.
// Save/load round trips are bit-exact.
struct Checkpoint {
    MetaParams params;
    MlpSpec spec;
    Partition partition;
    MetaConfig meta_cfg;
    TaskFamilyConfig task_cfg;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace metamirror
