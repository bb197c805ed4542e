#pragma once

#include <stdexcept>
#include <string>

namespace natex {

// Base class for every error this library raises on purpose.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration files, CLI arguments, or file schemas. The CLI maps
// this family to exit code 2.
struct config_error : error {
  using error::error;
};

// A required column is missing or an input file has the wrong layout.
struct schema_error : config_error {
  using config_error::config_error;
};

// A cell or config value could not be parsed; messages carry row/column.
struct parse_error : config_error {
  using config_error::config_error;
};

// Parsed fine but violates a value-level invariant (e.g. p outside (0,1)).
struct validation_error : config_error {
  using config_error::config_error;
};

// Mathematical domain violations: propensities at 0 or 1, correlation of a
// constant vector, and similar.
struct domain_error : error {
  using error::error;
};

// The data cannot support the request: a single-arm sample, an empty
// propensity window, a split with an empty arm after retries.
struct degenerate_error : error {
  using error::error;
};

// Guards on combinatorial cost (exhaustive enumeration size).
struct cost_error : error {
  using error::error;
};

// Numerical failure: singular normal equations, non-convergent bisection.
struct numeric_error : error {
  using error::error;
};

// A name was not found in a registry.
struct lookup_error : error {
  using error::error;
};

}  // namespace natex
