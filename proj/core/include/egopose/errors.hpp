#pragma once

#include <stdexcept>
#include <string>

namespace egopose {

enum class ErrorCode {
  kDegenerateInput,
  kIo,
  kFormat,
  kInvalidProfile,
  kTooShort,
  kTooFewSequences,
  kWindowLengthMismatch,
  kOddWindow,
  kConfigMismatch,
  kShapeMismatch,
  kEmptyDataset,
  kNonPositiveMeasurement,
  kMissingWeights,
  kInvalidArgument,
};

const char* to_string(ErrorCode code);

/// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace egopose
