#pragma once

#include <stdexcept>
#include <string>

namespace valc {

enum class ErrorKind {
  BadMagic,
  UnsupportedVersion,
  TruncatedRecord,
  TrailingData,
  DimensionMismatch,
  NonFiniteValue,
  InvalidValue,
  IoFailure,
  ZeroAttentionMass,
  NonPositiveGamma,
  BadSpan,
  NotPositiveDefinite,
  EmptyConcept,
  NonPositiveDivisor,
  DomainError,
  NoConvergence,
  MissingClsEmbedding,
  MissingLabel,
  SingleClass,
  EmptyCorpus,
  DegenerateSpread,
  InvalidArgument,
};

/// Coarse grouping used for process exit codes.
enum class ErrorCategory { Usage, Data, Numerical };

const char* to_string(ErrorKind kind) noexcept;
ErrorCategory category(ErrorKind kind) noexcept;
/// 1 for usage errors, 2 for data errors, 3 for numerical failures.
int exit_code(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace valc
