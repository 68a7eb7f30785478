#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace knockoff {

enum class ErrorCode {
  NumericalFailure,
  RankDeficient,
  NotPositiveDefinite,
  SdpFailure,
  InfeasibleConstraint,
  InfeasibleS,
  InsufficientRows,
  SingularGram,
  InvalidWeight,
  PathFailure,
  NoComplement,
  EmptyInput,
  RankDeficientGroup,
  InvalidSpec,
  ZeroSAtSignal,
  InvalidArgument,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SdpFailure: return "SdpFailure";
    case ErrorCode::InfeasibleConstraint: return "InfeasibleConstraint";
    case ErrorCode::InfeasibleS: return "InfeasibleS";
    case ErrorCode::InsufficientRows: return "InsufficientRows";
    case ErrorCode::SingularGram: return "SingularGram";
    case ErrorCode::InvalidWeight: return "InvalidWeight";
    case ErrorCode::PathFailure: return "PathFailure";
    case ErrorCode::NoComplement: return "NoComplement";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::RankDeficientGroup: return "RankDeficientGroup";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ZeroSAtSignal: return "ZeroSAtSignal";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` tells callers what went wrong.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace knockoff
