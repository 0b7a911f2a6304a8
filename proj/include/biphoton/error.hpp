#pragma once

#include <stdexcept>
#include <string>

namespace biphoton {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or out-of-domain argument.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure that is not the caller's fault (node, step underflow, singular fit).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class NodeProximity : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class StepUnderflow : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ZeroSingles : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularFit : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace biphoton
