#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace teleop {

enum class ErrorCode {
  DimensionMismatch,
  InvalidArgument,
  NotConverged,
  GoalOutOfLimits,
  IkFailure,
  InvalidTransition,
  Stage2Aborted,
  MalformedFrame,
  RoleConflict,
  IncompleteLog,
  EmptyInput,
  IoFailure,
  SchemaMismatch,
  ConfigError,
  ReplayDivergence,
  BindFailure,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::GoalOutOfLimits: return "GoalOutOfLimits";
    case ErrorCode::IkFailure: return "IkFailure";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::Stage2Aborted: return "Stage2Aborted";
    case ErrorCode::MalformedFrame: return "MalformedFrame";
    case ErrorCode::RoleConflict: return "RoleConflict";
    case ErrorCode::IncompleteLog: return "IncompleteLog";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ReplayDivergence: return "ReplayDivergence";
    case ErrorCode::BindFailure: return "BindFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require_dims(std::size_t got, std::size_t expected,
                         std::string_view what) {
  if (got != expected) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": expected " + std::to_string(expected) +
                    " entries, got " + std::to_string(got));
  }
}

}  // namespace teleop
