#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace sgdlab {

// Base class for every error raised by the library. The CLI maps the two
// families below onto exit codes 1 (validation) and 2 (numeric failure).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something malformed: wrong shapes, out-of-range arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Dense representation requested above the configured size limit.
class CapacityError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// Malformed file on disk; carries the byte offset where parsing stopped.
class FormatError : public InvalidInput {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : InvalidInput(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Non-finite value or a mathematically undefined operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Eigengap is zero, so a perturbation bound is undefined.
class DegenerateGapError : public NumericError {
 public:
  using NumericError::NumericError;
};

// An optimizer step produced a non-finite iterate. The last finite
// parameter vector is kept so callers can inspect or checkpoint it.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, Eigen::VectorXd last_finite, int iteration)
      : NumericError(what), last_finite_(std::move(last_finite)), iteration_(iteration) {}
  const Eigen::VectorXd& last_finite() const { return last_finite_; }
  int iteration() const { return iteration_; }

 private:
  Eigen::VectorXd last_finite_;
  int iteration_;
};

}  // namespace sgdlab
