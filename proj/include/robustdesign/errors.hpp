#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace robustdesign {

enum class ErrorKind {
  DegenerateCovariate,
  KnotCountTooLarge,
  ShapeMismatch,
  InvalidParameter,
  OutOfRange,
  InvalidSpec,
  SimulationOverflow,
  LikelihoodUnderflow,
  EvidenceUndefined,
  NumericalSingularity,
  NotPositiveDefinite,
  EstimationFailed,
  EfficiencyUndefined,
  TransectOutOfBounds,
  MissingCovariate,
  InvalidConfig,
  IoError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateCovariate: return "DegenerateCovariate";
    case ErrorKind::KnotCountTooLarge: return "KnotCountTooLarge";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidParameter: return "InvalidParameter";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::SimulationOverflow: return "SimulationOverflow";
    case ErrorKind::LikelihoodUnderflow: return "LikelihoodUnderflow";
    case ErrorKind::EvidenceUndefined: return "EvidenceUndefined";
    case ErrorKind::NumericalSingularity: return "NumericalSingularity";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::EstimationFailed: return "EstimationFailed";
    case ErrorKind::EfficiencyUndefined: return "EfficiencyUndefined";
    case ErrorKind::TransectOutOfBounds: return "TransectOutOfBounds";
    case ErrorKind::MissingCovariate: return "MissingCovariate";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so
/// callers (the optimizer in particular) can decide what is recoverable.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace robustdesign
