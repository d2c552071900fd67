#pragma once

#include <stdexcept>
#include <string>

namespace deptest {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SampleSizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a non-finite value appears in a computation graph; carries the
// name of the op that produced it.
struct TrainingDivergence : NumericError {
  explicit TrainingDivergence(const std::string& op)
      : NumericError("non-finite value in op '" + op + "'"), op_name(op) {}
  std::string op_name;
};

struct DegenerateDataError : DataError {
  using DataError::DataError;
};

struct ThresholdUnavailable : NumericError {
  using NumericError::NumericError;
};

struct GradientUnavailable : NumericError {
  using NumericError::NumericError;
};

}  // namespace deptest
