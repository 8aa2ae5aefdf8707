#pragma once

#include <stdexcept>
#include <string>

namespace stx {

// Failure taxonomy. Contract violations (bad shapes, bad arguments) derive
// from invalid_argument; runtime failures derive from runtime_error.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Linear algebra failure (non-SPD solve, degenerate kernel input, ...).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stitching left pixels with zero accumulated weight.
struct CoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A training loss went non-finite; the message names the offending term.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stx
