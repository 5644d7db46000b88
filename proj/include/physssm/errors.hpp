#pragma once

#include <stdexcept>
#include <string>

namespace physssm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration: unknown system, bad flags, inconsistent sizes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Mismatched dimensions or sequence lengths.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values encountered during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IntegrationDiverged : public NumericError {
 public:
  IntegrationDiverged(double t, const std::string& detail)
      : NumericError("integration diverged at t=" + std::to_string(t) + ": " + detail), time(t) {}
  double time;
};

/// (I - delta/2 A) is singular or numerically close to it.
class DiscretizationSingular : public NumericError {
 public:
  DiscretizationSingular(double delta, double rcond)
      : NumericError("bilinear discretization singular: delta=" + std::to_string(delta) +
                     " rcond estimate=" + std::to_string(rcond)),
        delta(delta),
        rcond(rcond) {}
  double delta;
  double rcond;
};

/// A structural invariant (mask/known support overlap, stale checkpoint, ...) does not hold.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(int epoch, int step, const std::string& detail)
      : NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                     std::to_string(step) + ": " + detail),
        epoch(epoch),
        step(step) {}
  int epoch;
  int step;
};

}  // namespace physssm
