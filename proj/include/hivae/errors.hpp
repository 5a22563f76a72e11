#pragma once

#include <stdexcept>
#include <string>

namespace hivae {

// Invalid shapes, factors, cutoffs, or other configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required input (checkpoint, content latent, stage) is missing.
struct PreconditionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or truncated container files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or integrity checks failing during numerics.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf loss during training; carries the step it happened on.
struct DivergenceError : NumericalError {
  DivergenceError(const std::string& what, long step)
      : NumericalError(what + " (step " + std::to_string(step) + ")"), step(step) {}
  long step;
};

}  // namespace hivae
