// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pusnet {

/// Bad arguments or malformed inputs. The CLI maps this to exit status 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A model container failed to parse or violates its invariants.
class ContainerError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Failures that happen while doing the work (IO, diverging training).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pusnet
