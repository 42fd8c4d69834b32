#include "valc/error.hpp"

namespace valc {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::TruncatedRecord: return "TruncatedRecord";
    case ErrorKind::TrailingData: return "TrailingData";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::InvalidValue: return "InvalidValue";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::ZeroAttentionMass: return "ZeroAttentionMass";
    case ErrorKind::NonPositiveGamma: return "NonPositiveGamma";
    case ErrorKind::BadSpan: return "BadSpan";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::EmptyConcept: return "EmptyConcept";
    case ErrorKind::NonPositiveDivisor: return "NonPositiveDivisor";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::MissingClsEmbedding: return "MissingClsEmbedding";
    case ErrorKind::MissingLabel: return "MissingLabel";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::DegenerateSpread: return "DegenerateSpread";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

ErrorCategory category(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::BadSpan:
      return ErrorCategory::Usage;
    case ErrorKind::NonPositiveGamma:
    case ErrorKind::NotPositiveDefinite:
    case ErrorKind::EmptyConcept:
    case ErrorKind::NonPositiveDivisor:
    case ErrorKind::DomainError:
    case ErrorKind::NoConvergence:
    case ErrorKind::DegenerateSpread:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::Usage:
      return 1;
    case ErrorCategory::Data:
      return 2;
    case ErrorCategory::Numerical:
      return 3;
  }
  return 2;
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace valc
