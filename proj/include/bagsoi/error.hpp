#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bagsoi {

enum class ErrorCode {
  DegenerateVertices,
  NonPositiveAxis,
  TooFewPoints,
  DegenerateSpread,
  KTooLarge,
  EmptySet,
  InsufficientPoints,
  DegenerateRim,
  Infeasible,
  DegenerateBase,
  HorizontalNormal,
  RegularizationFailed,
  PlanningFailed,
  DegenerateExcitation,
  SolverFailure,
  Stalled,
  AnchorsCoincident,
  ParseError,
  ValidationError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bagsoi
