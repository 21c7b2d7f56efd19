#pragma once

#include <stdexcept>
#include <string>

namespace kvt {

/// det F <= 0 where a physical deformation gradient is required.
class NonphysicalState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a constitutive function (e.g. theta < 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller broke a documented precondition (shape mismatch, non-symmetric input, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid parameter set or configuration document.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Reading or writing a file failed; the message names the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A time step could not be completed; the caller may retry with a smaller step.
class StepRejected : public std::runtime_error {
 public:
  StepRejected(const std::string& what, int step = -1) : std::runtime_error(what), step_(step) {}
  [[nodiscard]] int step() const noexcept { return step_; }

 private:
  int step_;
};

}  // namespace kvt
