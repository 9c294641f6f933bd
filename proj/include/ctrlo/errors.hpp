#pragma once

#include <stdexcept>
#include <string>

namespace ctrlo {

/// Bad argument to an operation (shape mismatch, invalid axis, ...).
struct argument_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an API contract (non-scalar loss, M > N, empty input, ...).
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed dataset / checkpoint bytes. Message carries a byte offset.
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Numeric failure (NaN loss, zero-norm normalization, ...).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Procedural generation could not satisfy its constraints.
struct generation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent run configuration.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ctrlo
