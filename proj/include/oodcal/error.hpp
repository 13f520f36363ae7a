#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace oodcal {

enum class ErrorCode {
  // dataset
  MalformedHeader,
  MalformedManifest,
  MalformedValue,
  NonFiniteValue,
  LabelOutOfRange,
  DuplicateId,
  ColumnCountMismatch,
  ClassTooSmall,
  UnlabeledDataset,
  InvalidArgument,
  Io,
  // scores
  EmptyVector,
  NonPositiveTemperature,
  SingularCovariance,
  DimensionMismatch,
  KExceedsReferenceSize,
  IncompatibleDataset,
  // calibrate / evaluate
  EmptyScores,
  BetaOutOfRange,
  MissingActivated,
  ClassIndexOutOfRange,
  // simulate
  AllThresholdsInfinite,
  // analyze
  EmptyInput,
  ConstantInput,
  LengthMismatch,
  SetNameMismatch,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::MalformedValue: return "MalformedValue";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::ColumnCountMismatch: return "ColumnCountMismatch";
    case ErrorCode::ClassTooSmall: return "ClassTooSmall";
    case ErrorCode::UnlabeledDataset: return "UnlabeledDataset";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::EmptyVector: return "EmptyVector";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::KExceedsReferenceSize: return "KExceedsReferenceSize";
    case ErrorCode::IncompatibleDataset: return "IncompatibleDataset";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::BetaOutOfRange: return "BetaOutOfRange";
    case ErrorCode::MissingActivated: return "MissingActivated";
    case ErrorCode::ClassIndexOutOfRange: return "ClassIndexOutOfRange";
    case ErrorCode::AllThresholdsInfinite: return "AllThresholdsInfinite";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SetNameMismatch: return "SetNameMismatch";
  }
  return "Unknown";
}

/// Library-wide exception. `where()` carries the offending row (1-based data
/// row) or class index when the error is attributable to one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail, std::optional<std::size_t> where = std::nullopt)
      : std::runtime_error(format(code, detail, where)), code_(code), where_(where) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> where() const noexcept { return where_; }

 private:
  static std::string format(ErrorCode code, const std::string& detail,
                            std::optional<std::size_t> where) {
    std::string msg{to_string(code)};
    if (where) msg += "(" + std::to_string(*where) + ")";
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  ErrorCode code_;
  std::optional<std::size_t> where_;
};

}  // namespace oodcal
