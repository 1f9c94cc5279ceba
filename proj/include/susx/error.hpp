#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace susx {

enum class ErrorCode {
  MalformedHeader,
  DimensionMismatch,
  NonFiniteValue,
  LabelOutOfRange,
  IoFailure,
  DegenerateRow,
  EmptyClass,
  DegenerateMean,
  UnnormalizedInput,
  InsufficientRows,
  NotStochastic,
  InsufficientCandidates,
  MissingLabels,
  InsufficientShots,
  LengthMismatch,
  EmptyInput,
  InvalidArgument,
  GridParseError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::DegenerateRow: return "DegenerateRow";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::DegenerateMean: return "DegenerateMean";
    case ErrorCode::UnnormalizedInput: return "UnnormalizedInput";
    case ErrorCode::InsufficientRows: return "InsufficientRows";
    case ErrorCode::NotStochastic: return "NotStochastic";
    case ErrorCode::InsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::InsufficientShots: return "InsufficientShots";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::GridParseError: return "GridParseError";
  }
  return "Unknown";
}

/// Every failure in the library is reported through this type. `what()` is
/// machine-readable: `<Code>` or `<Code>:<detail>`, e.g. `DegenerateRow:3`.
class Error : public std::runtime_error {
 public:
  explicit Error(ErrorCode code, std::string detail = {})
      : std::runtime_error(compose(code, detail)), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  static std::string compose(ErrorCode code, const std::string& detail) {
    std::string out(to_string(code));
    if (!detail.empty()) {
      out += ':';
      out += detail;
    }
    return out;
  }

  ErrorCode code_;
  std::string detail_;
};

}  // namespace susx
