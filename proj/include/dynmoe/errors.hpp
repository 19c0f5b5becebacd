// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include "dynmoe/numerics/tensor.hpp"

namespace dynmoe {

/// Invalid configuration or hyperparameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad user data (token ids, empty batches, unknown keys).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation not valid for the object's current state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A file some step depends on does not exist or cannot be read.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using num::DimensionError;
using num::NumericError;

}  // namespace dynmoe
