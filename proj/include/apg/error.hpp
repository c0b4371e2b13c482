#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace apg {

enum class ErrorCode {
  kMissingKey,
  kShapeMismatch,
  kUnsupportedDtype,
  kUnsupportedFormat,
  kNegativeLabel,
  kLabelOverflow,
  kIo,
  kMalformedRle,
  kDuplicateId,
  kInvalidArgument,
  kSeedOutsideRegion,
  kBackendUnavailable,
  kEmbeddingMissing,
  kGraphLoadError,
  kGraphSignatureMismatch,
  kThresholdBelowHalf,
  kEmptyGroup,
  kMissingCell,
  kAllZeroDiffs,
  kPlacementFailure,
  kMissingPrediction,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingKey: return "MissingKey";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kUnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kNegativeLabel: return "NegativeLabel";
    case ErrorCode::kLabelOverflow: return "LabelOverflow";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kMalformedRle: return "MalformedRle";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSeedOutsideRegion: return "SeedOutsideRegion";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kEmbeddingMissing: return "EmbeddingMissing";
    case ErrorCode::kGraphLoadError: return "GraphLoadError";
    case ErrorCode::kGraphSignatureMismatch: return "GraphSignatureMismatch";
    case ErrorCode::kThresholdBelowHalf: return "ThresholdBelowHalf";
    case ErrorCode::kEmptyGroup: return "EmptyGroup";
    case ErrorCode::kMissingCell: return "MissingCell";
    case ErrorCode::kAllZeroDiffs: return "AllZeroDiffs";
    case ErrorCode::kPlacementFailure: return "PlacementFailure";
    case ErrorCode::kMissingPrediction: return "MissingPrediction";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception. `code()` is the
/// machine-readable category; `what()` carries "<Category>: detail".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace apg
