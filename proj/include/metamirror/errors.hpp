#pragma once

#include <stdexcept>
#include <string>

namespace metamirror {

// Shape/argument mismatch inside a graph op. The message names the op and
// the offending shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad arguments outside of graph ops: invalid configs, empty data splits,
// degenerate ranges, an op asked of the wrong map kind, and so on.
struct InvalidArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A non-finite loss or gradient was produced during inner-loop adaptation.
// Carries the step index at which the value first went non-finite.
struct DivergenceError : std::runtime_error {
    DivergenceError(int step_index, const std::string& what)
        : std::runtime_error(what), step(step_index) {}
    int step;
};

// Every task in a meta-batch diverged; nothing left to average.
struct AllTasksDivergedError : std::runtime_error {
    explicit AllTasksDivergedError(const std::string& what, int iter = -1)
        : std::runtime_error(what), outer_iter(iter) {}
    int outer_iter;
};

// Config file parse/validation failure. Parse errors carry a line number
// in the message.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent checkpoint file.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace metamirror
