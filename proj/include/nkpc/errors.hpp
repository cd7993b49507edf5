#pragma once

#include <stdexcept>
#include <string>

namespace nkpc {

/// Invalid arguments: bad dimensions, non-symmetric covariance, bad config values.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for failures of the numerics themselves (maps to CLI exit code 2).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A Neumann series or learned representation blew up.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, double residual)
      : NumericalError(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Operation called in the wrong operating mode.
class ModeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Control execution requested for a time with no stored schedule entry.
class ScheduleError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

}  // namespace nkpc
