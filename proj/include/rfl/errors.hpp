#pragma once

#include <stdexcept>
#include <string>

namespace rfl {

// Shape or rank mismatch between tensors. Message names both shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-facing configuration (CLI flag, config key, strategy setting).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed on-disk data (IDX, CIFAR binary, checkpoint). Message carries the
// offending offset or field where known.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid runtime input (out-of-range label, out-of-range pixel, empty set).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Head or module initialization failure (shape mismatch with a source
// checkpoint, unsupported strategy/backbone combination).
struct InitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API contract violation (non-scalar loss, double attach, dtype mix).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss). Carries diagnostics.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, long step, double lr, double grad_norm)
        : std::runtime_error(msg), step(step), lr(lr), grad_norm(grad_norm) {}
    long step;
    double lr;
    double grad_norm;
};

}  // namespace rfl
