#pragma once

#include <stdexcept>
#include <string>

namespace dcsw {

/// Invalid configuration: bad flags, inconsistent shapes, architecture mismatch.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An API was called outside its contract (non-scalar loss, too-small input).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, truncated or malformed input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values surfaced during training or evaluation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a higher-order gradient is requested through an op whose
/// backward is not expressed in differentiable primitives.
class UnsupportedOpError : public std::runtime_error {
 public:
  explicit UnsupportedOpError(const std::string& op)
      : std::runtime_error("op '" + op + "' has no differentiable backward; "
                           "second-order gradient unsupported"),
        op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

}  // namespace dcsw
