#pragma once

// Stage machine for shared control: operator teleoperation, tag acquisition,
// disengagement, autonomous alignment and grasp, return to the disconnection
// pose, and reconnection.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/kinematics.hpp"

namespace teleop {

enum class Mode { TeleopCoarse, TagAcquired, Disconnected, Aligning, Grasping, Returning, Reconnected };

inline constexpr std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::TeleopCoarse: return "TeleopCoarse";
    case Mode::TagAcquired: return "TagAcquired";
    case Mode::Disconnected: return "Disconnected";
    case Mode::Aligning: return "Aligning";
    case Mode::Grasping: return "Grasping";
    case Mode::Returning: return "Returning";
    case Mode::Reconnected: return "Reconnected";
  }
  return "?";
}

inline std::optional<Mode> mode_from_string(std::string_view s) {
  for (Mode m : {Mode::TeleopCoarse, Mode::TagAcquired, Mode::Disconnected, Mode::Aligning,
                 Mode::Grasping, Mode::Returning, Mode::Reconnected}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

/// Modes in which the leader drives the follower.
inline constexpr bool mapping_enabled(Mode m) {
  return m == Mode::TeleopCoarse || m == Mode::TagAcquired || m == Mode::Reconnected;
}

/// Modes during which a disconnection pose is held.
inline constexpr bool autonomous(Mode m) {
  return m == Mode::Disconnected || m == Mode::Aligning || m == Mode::Grasping ||
         m == Mode::Returning;
}

enum class StageInput {
  ReliableDetection,
  OperatorConfirm,
  ApproachStarted,
  AlignmentDone,
  GraspClosed,
  ReturnDone,
  Abort,
};

inline constexpr std::string_view to_string(StageInput e) {
  switch (e) {
    case StageInput::ReliableDetection: return "ReliableDetection";
    case StageInput::OperatorConfirm: return "OperatorConfirm";
    case StageInput::ApproachStarted: return "ApproachStarted";
    case StageInput::AlignmentDone: return "AlignmentDone";
    case StageInput::GraspClosed: return "GraspClosed";
    case StageInput::ReturnDone: return "ReturnDone";
    case StageInput::Abort: return "Abort";
  }
  return "?";
}

enum class StageCommand { DisengageMapping, StopFollower, PlanApproach, CloseGripper, OpenGripper, PlanReturn, EngageMapping };

struct StageState {
  Mode mode = Mode::TeleopCoarse;
  std::optional<RigidTransform> disconnect_pose;
  std::optional<RigidTransform> grasp_pose;
  bool aborting = false;
  int episode = 0;
  double clock = 0.0;
};

/// What the machine needs to know about the world when an input arrives.
struct StageContext {
  RigidTransform ee_pose;
  std::optional<RigidTransform> grasp_pose;  // required by ApproachStarted
  double reconnect_tol_position = 1e-4;
  double reconnect_tol_orientation = 1e-4;
};

struct StageStep {
  StageState state;
  std::vector<StageCommand> commands;
};

[[noreturn]] inline void invalid_transition(const StageState& s, StageInput e,
                                            std::string_view why = {}) {
  std::string msg = std::string(to_string(e)) + " not allowed in " + std::string(to_string(s.mode));
  if (!why.empty()) msg += ": " + std::string(why);
  throw Error(ErrorCode::InvalidTransition, msg);
}

inline StageStep step_stage_machine(const StageState& state, StageInput input,
                                    const StageContext& ctx) {
  StageStep out{state, {}};
  StageState& s = out.state;
  switch (input) {
    case StageInput::ReliableDetection:
      if (s.mode != Mode::TeleopCoarse && s.mode != Mode::Reconnected) invalid_transition(state, input);
      s.mode = Mode::TagAcquired;
      s.grasp_pose.reset();
      s.aborting = false;
      ++s.episode;
      break;

    case StageInput::OperatorConfirm:
      if (s.mode != Mode::TagAcquired) invalid_transition(state, input);
      s.mode = Mode::Disconnected;
      s.disconnect_pose = ctx.ee_pose;
      out.commands = {StageCommand::DisengageMapping, StageCommand::StopFollower};
      break;

    case StageInput::ApproachStarted:
      if (s.mode != Mode::Disconnected) invalid_transition(state, input);
      if (!ctx.grasp_pose) invalid_transition(state, input, "no grasp pose");
      s.mode = Mode::Aligning;
      s.grasp_pose = ctx.grasp_pose;
      out.commands = {StageCommand::PlanApproach};
      break;

    case StageInput::AlignmentDone:
      if (s.mode != Mode::Aligning) invalid_transition(state, input);
      s.mode = Mode::Grasping;
      out.commands = {StageCommand::CloseGripper};
      break;

    case StageInput::GraspClosed:
      if (s.mode != Mode::Grasping) invalid_transition(state, input);
      s.mode = Mode::Returning;
      out.commands = {StageCommand::PlanReturn};
      break;

    case StageInput::ReturnDone: {
      if (s.mode != Mode::Returning) invalid_transition(state, input);
      const RigidTransform& disc = *s.disconnect_pose;
      if (position_error(disc, ctx.ee_pose) > ctx.reconnect_tol_position ||
          orientation_error(disc, ctx.ee_pose) > ctx.reconnect_tol_orientation) {
        invalid_transition(state, input, "follower is not at the disconnection pose");
      }
      s.mode = s.aborting ? Mode::TeleopCoarse : Mode::Reconnected;
      s.disconnect_pose.reset();
      s.aborting = false;
      out.commands = {StageCommand::EngageMapping};
      break;
    }

    case StageInput::Abort:
      if (s.mode == Mode::TagAcquired) {
        s.mode = Mode::TeleopCoarse;
        break;
      }
      if (!autonomous(s.mode)) invalid_transition(state, input);
      if (s.mode == Mode::Returning) {
        s.aborting = true;
        break;
      }
      if (s.mode == Mode::Grasping) out.commands.push_back(StageCommand::OpenGripper);
      s.mode = Mode::Returning;
      s.aborting = true;
      out.commands.push_back(StageCommand::PlanReturn);
      break;
  }
  return out;
}

/// q_B^des = q_L while the mapping is engaged, nothing otherwise.
inline std::optional<JointVector> teleop_tick(const JointVector& q_leader, bool mapping,
                                              std::size_t follower_dof) {
  require_dims(static_cast<std::size_t>(q_leader.size()), follower_dof, "teleop_tick");
  if (!mapping) return std::nullopt;
  return q_leader;
}

}  // namespace teleop
