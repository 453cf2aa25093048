#pragma once

#include <stdexcept>
#include <string>

namespace crnn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
struct DimensionError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Unreadable or malformed input data.
struct InputError : Error {
  using Error::Error;
};

// Invalid model or run configuration.
struct ConfigError : Error {
  using Error::Error;
};

struct VocabularyError : Error {
  using Error::Error;
};

struct EvaluationError : Error {
  using Error::Error;
};

// Caller broke a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

}  // namespace crnn
