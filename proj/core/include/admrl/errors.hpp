#pragma once

#include <stdexcept>
#include <string>

namespace admrl {

/// Caller supplied a malformed value (wrong dimension, non-finite entry,
/// out-of-domain parameter).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation invoked on an object that is not in a usable state,
/// e.g. fitting a model on an empty dataset.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A numerical procedure could not produce a trustworthy result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace admrl
