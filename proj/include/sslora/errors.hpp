#pragma once

#include <stdexcept>
#include <string>

namespace sslora {

/// Shape/argument contract violation (mismatched dimensions, bad index, bad range).
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid or inconsistent configuration: bad config files, impossible layer
/// setups (e.g. empty left null space with domain-specific adapters), bad CLI input.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: SVD non-convergence, NaN loss during training.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what, long iterations = -1,
                          std::string checkpoint = {})
      : std::runtime_error(what), iterations_(iterations),
        checkpoint_(std::move(checkpoint)) {}

  /// Iteration count at failure, or -1 when not applicable.
  long iterations() const { return iterations_; }
  /// Path of the last good checkpoint written before aborting, if any.
  const std::string& last_good_checkpoint() const { return checkpoint_; }

private:
  long iterations_;
  std::string checkpoint_;
};

/// Degenerate numerical input: all-zero singular values, zero adapter matrix.
class DegenerateInputError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Distinct failure codes for the tensor container format.
enum class PersistCode {
  bad_magic,
  bad_version,
  truncated_header,
  bad_header,
  bad_dtype,
  overlap,
  truncated_payload,
  shape_mismatch,
  unknown_tensor,
  io,
};

inline const char* to_string(PersistCode code) {
  switch (code) {
    case PersistCode::bad_magic:         return "bad_magic";
    case PersistCode::bad_version:       return "bad_version";
    case PersistCode::truncated_header:  return "truncated_header";
    case PersistCode::bad_header:        return "bad_header";
    case PersistCode::bad_dtype:         return "bad_dtype";
    case PersistCode::overlap:           return "overlap";
    case PersistCode::truncated_payload: return "truncated_payload";
    case PersistCode::shape_mismatch:    return "shape_mismatch";
    case PersistCode::unknown_tensor:    return "unknown_tensor";
    case PersistCode::io:                return "io";
  }
  return "unknown";
}

class PersistError : public std::runtime_error {
public:
  PersistError(PersistCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  PersistCode code() const { return code_; }

private:
  PersistCode code_;
};

}  // namespace sslora
