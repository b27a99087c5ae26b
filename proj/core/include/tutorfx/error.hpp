#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tfx {

enum class ErrorCode {
  // model_core
  MalformedRecord,
  DuplicateEvent,
  // simulator
  InvalidConfig,
  EmptySelection,
  // sampler
  EmptyTreatmentSample,
  DegenerateSplit,
  // dkt
  NonFiniteLoss,
  DegenerateLabels,
  // forest
  NoOobCoverage,
  InsufficientVariation,
  // estimators
  LengthMismatch,
  PropensityOutOfRange,
  NoTreatedUnits,
  ZeroVariance,
  // analysis
  RankDeficientDesign,
  DegenerateQuartiles,
  InsufficientPlaceboCoverage,
  EmptyAfterTrim,
  MissingContext,
  // cli / io
  ConfigError,
  MissingUpstreamArtifact,
  ChecksumMismatch,
  IoError,
};

/// Broad failure class; drives the CLI exit code.
enum class ErrorCategory { Config, Data, Numeric };

std::string_view to_string(ErrorCode code);
ErrorCategory category_of(ErrorCode code);

/// Exit code the CLI returns for a failure of this class (2 config, 3 data, 4 numeric).
int exit_code_for(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace tfx
