#include "tutorfx/error.hpp"

namespace tfx {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateEvent: return "DuplicateEvent";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::EmptyTreatmentSample: return "EmptyTreatmentSample";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::NoOobCoverage: return "NoOobCoverage";
    case ErrorCode::InsufficientVariation: return "InsufficientVariation";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::PropensityOutOfRange: return "PropensityOutOfRange";
    case ErrorCode::NoTreatedUnits: return "NoTreatedUnits";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::DegenerateQuartiles: return "DegenerateQuartiles";
    case ErrorCode::InsufficientPlaceboCoverage: return "InsufficientPlaceboCoverage";
    case ErrorCode::EmptyAfterTrim: return "EmptyAfterTrim";
    case ErrorCode::MissingContext: return "MissingContext";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingUpstreamArtifact: return "MissingUpstreamArtifact";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::ConfigError:
      return ErrorCategory::Config;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::InsufficientVariation:
    case ErrorCode::ZeroVariance:
    case ErrorCode::RankDeficientDesign:
    case ErrorCode::PropensityOutOfRange:
    case ErrorCode::NoOobCoverage:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

int exit_code_for(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numeric: return 4;
  }
  return 1;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace tfx
