#pragma once

#include <stdexcept>
#include <string>

namespace binorm {

/// Tensor or parameter shapes that do not compose.
class InvalidShape : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller (e.g. a gate outside [0, 1]).
class ContractViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The finite-difference oracle could not produce a usable estimate.
class OracleFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace binorm
