#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace cgpo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid hyperparameter or malformed configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shape mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Index (e.g. diffusion step) outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// API misuse, such as calling backward on a non-scalar output.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation not valid in the current object state (e.g. sampling an empty buffer).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared. Carries the diffusion step and/or environment step
/// where it was detected, when known.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::optional<int> diffusion_step = {},
                        std::optional<long> env_step = {})
      : Error(what), diffusion_step_(diffusion_step), env_step_(env_step) {}

  std::optional<int> diffusion_step() const { return diffusion_step_; }
  std::optional<long> env_step() const { return env_step_; }

 private:
  std::optional<int> diffusion_step_;
  std::optional<long> env_step_;
};

}  // namespace cgpo
