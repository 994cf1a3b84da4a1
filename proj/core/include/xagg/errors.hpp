#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace xagg {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rejected input: shape mismatch, out-of-range values, malformed arguments.
struct ShapeError : Error {
  using Error::Error;
};

/// A documented precondition of an operation was violated.
struct ContractError : Error {
  using Error::Error;
};

/// Non-finite value produced during evaluation; message names the layer.
struct NumericError : Error {
  using Error::Error;
};

/// Malformed file contents (bad magic, truncated payload, version mismatch).
struct ParseError : Error {
  using Error::Error;
};

/// Training loss became non-finite.
struct TrainingDiverged : Error {
  using Error::Error;
};

/// Iterative attack could not recover a finite loss.
struct AttackDiverged : Error {
  AttackDiverged(const std::string& msg, std::vector<double> trace_)
      : Error(msg), trace(std::move(trace_)) {}
  std::vector<double> trace;
};

}  // namespace xagg
