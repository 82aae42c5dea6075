#pragma once

#include <string>
#include <vector>

#include "metamirror/meta.hpp"

namespace metamirror {

// A full run description parsed from a flat key = value config file.
// Unknown keys are rejected; missing keys fall back to defaults
// (inner.steps 5, inner.alpha 1e-2, outer.beta 1e-3, outer.batch 4).
struct RunConfig {
    MethodTag method = MethodTag::Mirror;
    TaskFamilyConfig task;
    std::vector<Index> hidden = {40, 40};
    MetaConfig meta;
    std::string out_dir = "out";

    // The task model implied by the family: regression head with scalar
    // output for sinusoid, M-way classification head for blobs.
    MlpSpec model_spec() const;

    void validate() const;
};

// Parses a config file; errors carry the offending line number.
RunConfig parse_run_config(const std::string& path);

// Parses config text (used by parse_run_config and tests).
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

// Environment overrides: any config key may be set via
// METAMIRROR_<KEY> with dots replaced by underscores, uppercased
// (e.g. METAMIRROR_INNER_ALPHA=0.02 overrides inner.alpha).
void apply_env_overrides(RunConfig& cfg);

extern const char* kEnvPrefix;

}  // namespace metamirror
