#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace camerapose {

enum class ErrorCode {
  ShapeMismatch,
  MissingRequiredJoints,
  InvalidImageDims,
  BehindCamera,
  DegenerateConfiguration,
  DegenerateBone,
  NonScalarRoot,
  MissingGradient,
  MissingCameraGroundTruth,
  ComponentKindMismatch,
  EmptyPool,
  ParseError,
  InvariantViolation,
  ConfigError,
  EmptyDataset,
  IoError,
  NumericAbort,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingRequiredJoints: return "MissingRequiredJoints";
    case ErrorCode::InvalidImageDims: return "InvalidImageDims";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::DegenerateBone: return "DegenerateBone";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::MissingCameraGroundTruth: return "MissingCameraGroundTruth";
    case ErrorCode::ComponentKindMismatch: return "ComponentKindMismatch";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NumericAbort: return "NumericAbort";
  }
  return "Unknown";
}

}  // namespace camerapose
