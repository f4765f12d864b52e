// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rshe {

// Base of every error thrown by the library. The C API maps each subclass
// onto one rshe_status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite input, violated invariant (monotonicity, weights, ranges).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Mismatched grid sizes, mode counts or array shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Configuration rejected before any computation starts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A computation ran but failed to deliver (non-convergence, overflow).
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rshe
