#include "egopose/errors.hpp"

namespace egopose {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateInput: return "DegenerateInput";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kFormat: return "FormatError";
    case ErrorCode::kInvalidProfile: return "InvalidProfile";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kTooFewSequences: return "TooFewSequences";
    case ErrorCode::kWindowLengthMismatch: return "WindowLengthMismatch";
    case ErrorCode::kOddWindow: return "OddWindow";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kNonPositiveMeasurement: return "NonPositiveMeasurement";
    case ErrorCode::kMissingWeights: return "MissingWeights";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace egopose
