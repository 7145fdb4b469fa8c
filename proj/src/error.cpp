#include "bagsoi/error.hpp"

namespace bagsoi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateVertices: return "DegenerateVertices";
    case ErrorCode::NonPositiveAxis: return "NonPositiveAxis";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateSpread: return "DegenerateSpread";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::DegenerateRim: return "DegenerateRim";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::DegenerateBase: return "DegenerateBase";
    case ErrorCode::HorizontalNormal: return "HorizontalNormal";
    case ErrorCode::RegularizationFailed: return "RegularizationFailed";
    case ErrorCode::PlanningFailed: return "PlanningFailed";
    case ErrorCode::DegenerateExcitation: return "DegenerateExcitation";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::Stalled: return "Stalled";
    case ErrorCode::AnchorsCoincident: return "AnchorsCoincident";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace bagsoi
