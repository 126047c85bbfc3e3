#pragma once

#include <stdexcept>
#include <string>

namespace turntaking {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument violates a documented precondition (bad index, bad trait, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Every member has zero speaking likelihood at some turn.
class DegenerateDistribution : public Error {
 public:
  using Error::Error;
};

/// The observed speaker has probability zero, so the log-likelihood is infinite.
class InfiniteLoss : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared inside a network or an optimizer step.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Malformed input file or configuration.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace turntaking
