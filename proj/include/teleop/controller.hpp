#pragma once

// The fixed-rate control loop. One call to Controller::tick consumes one
// leader input, advances the stage machine by at most one event, steps the
// simulated world and returns the tick's log record.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include "teleop/demo_log.hpp"
#include "teleop/dynamics.hpp"
#include "teleop/perception.hpp"
#include "teleop/planner.hpp"
#include "teleop/scenario.hpp"
#include "teleop/shared_control.hpp"
#include "teleop/simworld.hpp"

namespace teleop {

inline constexpr double kTriggerClose = 0.8;
inline constexpr double kTriggerOpen = 0.2;

class Controller {
 public:
  Controller(Scenario scenario, std::uint64_t seed)
      : sc_(std::move(scenario)), seed_(seed), rng_(seed), tracker_(sc_.detection) {
    const std::size_t n = sc_.follower().dof();
    require_dims(static_cast<std::size_t>(sc_.home.size()), n, "scenario home");
    require_within_limits(sc_.follower(), sc_.home, "home configuration");
    world_.q = sc_.home;
    world_.qd = JointVector::Zero(static_cast<Eigen::Index>(n));
    world_.objects = sc_.objects;
    world_.obstacles = sc_.obstacles;
    for (const auto& o : world_.objects) initial_z_[o.id] = o.pose.translation.z();
    prev_input_.q = sc_.home;
    leader_qd_ = JointVector::Zero(static_cast<Eigen::Index>(n));
    feedback_.integral = JointVector::Zero(static_cast<Eigen::Index>(n));
    synced_ = true;
  }

  const Scenario& scenario() const { return sc_; }
  std::uint64_t seed() const { return seed_; }
  const WorldState& world() const { return world_; }
  const StageState& stage() const { return stage_; }
  const ActiveTrajectory& active() const { return active_; }
  const TorqueStack& torque() const { return torque_; }
  bool synced() const { return synced_; }
  bool lifted() const { return lifted_; }
  const LeaderInput& last_input() const { return prev_input_; }
  RigidTransform ee_pose() const { return world_.ee_pose(sc_.follower()); }
  const std::optional<std::string>& abort_reason() const { return abort_reason_; }

  /// True while an autonomous episode owns the follower.
  bool stage2_active() const { return autonomous(stage_.mode); }

  LogHeader header(const std::string& driver) const {
    LogHeader h;
    h.scenario = sc_.name;
    h.scenario_path = sc_.path.string();
    h.scenario_hash = sc_.hash;
    h.seed = seed_;
    h.dt = sc_.sim.dt;
    h.dof = sc_.follower().dof();
    h.driver = driver;
    h.home = sc_.home;
    return h;
  }

  TickRecord tick(const LeaderInput& in) {
    const KinematicChain& chain = sc_.follower();
    const std::size_t n = chain.dof();
    require_dims(static_cast<std::size_t>(in.q.size()), n, "leader input");
    const double dt = sc_.sim.dt;

    TickRecord rec;
    rec.tick = world_.tick + 1;
    rec.input = in;
    rec.new_command = !(in == prev_input_);
    if (rec.new_command && !first_command_) first_command_ = world_.time;

    // Leader state from successive encoder readings.
    const JointVector qd_l = (in.q - prev_input_.q) / dt;
    const JointVector qdd_l = (qd_l - leader_qd_) / dt;
    leader_qd_ = qd_l;

    // Detections arrive one tick after the image was taken.
    if (pending_detection_) {
      const auto& [det, ee_at_capture] = *pending_detection_;
      tracker_.update(object_pose_from_detection(ee_at_capture, sc_.sim.camera, det));
    } else {
      tracker_.update(std::nullopt);
    }
    pending_detection_.reset();

    run_stage_logic(in, rec);
    run_teleop(in, rec);

    // Trigger with hysteresis; only while the operator drives the follower.
    if (mapping_enabled(stage_.mode) && in.present) {
      if (!trigger_closed_ && in.trigger >= kTriggerClose) {
        trigger_closed_ = true;
        actuate_gripper(world_, sc_.sim, GripperCommand::Close);
        rec.events.push_back({"gripper", {{"command", "close"}, {"source", "trigger"}}});
      } else if (trigger_closed_ && in.trigger <= kTriggerOpen) {
        trigger_closed_ = false;
        actuate_gripper(world_, sc_.sim, GripperCommand::Open);
        rec.events.push_back({"gripper", {{"command", "open"}, {"source", "trigger"}}});
      }
    }

    const StepReport report = step_world(world_, sc_.sim, active_, rng_);
    if (report.grasp) {
      grasp_outcome_ = report.grasp;
      rec.events.push_back(
          {"grasp", {{"outcome", *report.grasp == GraspOutcome::Attached ? "attached" : "missed"}}});
    }
    if (report.detection) pending_detection_ = std::make_pair(*report.detection, report.ee_pose);

    // Contacts count once per rising edge of each (link, obstacle) pair.
    std::set<std::pair<std::size_t, std::size_t>> now;
    for (const auto& c : report.contacts) {
      now.insert({c.link, c.obstacle});
      if (!contacts_.contains({c.link, c.obstacle})) {
        rec.events.push_back({"collision", {{"link", c.link}, {"obstacle", c.obstacle},
                                            {"clearance", c.clearance}}});
      }
    }
    contacts_ = std::move(now);

    if (!lifted_ && world_.gripper.attached) {
      const SimObject* o = world_.find_object(*world_.gripper.attached);
      if (o && o->pose.translation.z() >= initial_z_[o->id] + sc_.lift_height) {
        lifted_ = true;
        rec.events.push_back({"lift", {{"object", o->id},
                                       {"since_first_command",
                                        world_.time - first_command_.value_or(0.0)}}});
      }
    }

    LeaderState leader{in.q, qd_l, qdd_l, in.trigger * sc_.leader.trigger.max_angle};
    const auto out = total_leader_torque(sc_.leader, leader, world_.q, world_.qd,
                                         world_.gripper.attached.has_value(), dt, feedback_);
    feedback_ = out.feedback;
    torque_ = out.stack;

    stage_.clock = world_.time;
    prev_input_ = in;

    rec.t = world_.time;
    rec.q_follower = world_.q;
    rec.qd_follower = world_.qd;
    rec.gripper = world_.gripper.mode;
    rec.attached = world_.gripper.attached;
    rec.mode = stage_.mode;
    rec.detection = report.detection;
    rec.torque = torque_;
    rec.target_pose = stage_.grasp_pose;
    return rec;
  }

  /// Stop the follower where it is and suspend the mapping.
  void hold() {
    active_.trajectory = JointTrajectory::hold(world_.q);
    active_.elapsed = 0.0;
  }

 private:
  void apply(StageInput input, const std::optional<RigidTransform>& grasp, TickRecord& rec) {
    StageContext ctx{ee_pose(), grasp, sc_.reconnect_tol_position,
                     sc_.reconnect_tol_orientation};
    const Mode from = stage_.mode;
    StageStep step = step_stage_machine(stage_, input, ctx);
    stage_ = step.state;
    rec.events.push_back({"stage", {{"input", std::string(to_string(input))},
                                    {"from", std::string(to_string(from))},
                                    {"to", std::string(to_string(stage_.mode))}}});
    for (StageCommand c : step.commands) execute(c, rec);
  }

  void abort(const std::string& reason, TickRecord& rec) {
    abort_reason_ = reason;
    rec.events.push_back({"abort", {{"reason", reason}}});
    apply(StageInput::Abort, std::nullopt, rec);
  }

  void execute(StageCommand c, TickRecord& rec) {
    const KinematicChain& chain = sc_.follower();
    switch (c) {
      case StageCommand::DisengageMapping:
        synced_ = false;
        break;
      case StageCommand::StopFollower:
        hold();
        q_disconnect_ = world_.q;
        break;
      case StageCommand::PlanApproach:
        break;  // planned before the transition so IK failure can abort
      case StageCommand::CloseGripper:
        actuate_gripper(world_, sc_.sim, GripperCommand::Close);
        rec.events.push_back({"gripper", {{"command", "close"}, {"source", "stage"}}});
        break;
      case StageCommand::OpenGripper:
        actuate_gripper(world_, sc_.sim, GripperCommand::Open);
        rec.events.push_back({"gripper", {{"command", "open"}, {"source", "stage"}}});
        break;
      case StageCommand::PlanReturn: {
        std::vector<JointVector> path;
        try {
          path = cartesian_waypoints(chain, world_.q, *stage_.disconnect_pose,
                                     sc_.cartesian_step, sc_.ik);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::IkFailure) throw;
          path = {world_.q};
          rec.events.push_back({"return_fallback", {{"reason", e.what()}}});
        }
        // Finish on the stored configuration itself so the pose matches bitwise.
        if (path.size() > 1 && (path.back() - *q_disconnect_).lpNorm<Eigen::Infinity>() < 0.05) {
          path.back() = *q_disconnect_;
        } else if (path.back() != *q_disconnect_) {
          path.push_back(*q_disconnect_);
        }
        active_.trajectory = path.size() == 1
                                 ? JointTrajectory::hold(path.front())
                                 : time_polyline(path, chain.velocity_limits(),
                                                 chain.acceleration_limits());
        active_.elapsed = 0.0;
        break;
      }
      case StageCommand::EngageMapping:
        q_disconnect_.reset();
        synced_ = false;
        break;
    }
  }

  void run_stage_logic(const LeaderInput& in, TickRecord& rec) {
    const bool confirm_edge = in.confirm && !prev_input_.confirm;
    const bool abort_edge = in.abort && !prev_input_.abort;

    if (abort_edge && (stage_.mode == Mode::TagAcquired ||
                       (autonomous(stage_.mode) && !stage_.aborting))) {
      if (stage_.mode == Mode::TagAcquired) {
        apply(StageInput::Abort, std::nullopt, rec);
      } else {
        abort("operator", rec);
      }
      return;
    }

    switch (stage_.mode) {
      case Mode::TeleopCoarse:
      case Mode::Reconnected:
        if (tracker_.reliable() && !world_.gripper.attached &&
            world_.gripper.mode == GripperMode::Open) {
          apply(StageInput::ReliableDetection, std::nullopt, rec);
        }
        break;

      case Mode::TagAcquired:
        if (confirm_edge && tracker_.has_estimate()) {
          const RigidTransform tag_in_base = tracker_.estimate();
          const SimObject& target = sc_.target();
          const RigidTransform object = tag_in_base * target.tag_offset.inverse();
          grasp_estimate_ = grasp_pose_from_object(object, target.grasp_offset);
          abort_reason_.reset();
          apply(StageInput::OperatorConfirm, std::nullopt, rec);
        } else if (confirm_edge) {
          rec.events.push_back({"confirm_ignored", {{"reason", "no estimate"}}});
        }
        break;

      case Mode::Disconnected:
        if (!active_.finished()) break;
        try {
          auto plan = plan_cartesian_approach(sc_.follower(), world_.q, *grasp_estimate_,
                                              sc_.cartesian_step, sc_.ik);
          apply(StageInput::ApproachStarted, grasp_estimate_, rec);
          active_.trajectory = std::move(plan);
          active_.elapsed = 0.0;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::IkFailure && e.code() != ErrorCode::GoalOutOfLimits) throw;
          abort(std::string(to_string(ErrorCode::IkFailure)), rec);
        }
        break;

      case Mode::Aligning:
        if (!active_.finished()) break;
        {
          const RigidTransform ee = ee_pose();
          const RigidTransform& cmd = *stage_.grasp_pose;
          json data = {{"e_p", position_error(cmd, ee)},
                       {"e_R", orientation_error(cmd, ee)},
                       {"pose", pose_to_json(ee)}};
          if (const SimObject* o = world_.find_object(sc_.target_id)) {
            data["e_p_true"] = position_error(o->grasp_frame(), ee);
            data["e_R_true"] = orientation_error(o->grasp_frame(), ee);
          }
          rec.events.push_back({"align", std::move(data)});
        }
        grasp_outcome_.reset();
        apply(StageInput::AlignmentDone, std::nullopt, rec);
        if (world_.gripper.mode == GripperMode::Closed) {
          // zero close time resolves immediately
          grasp_outcome_ = world_.gripper.attached ? GraspOutcome::Attached : GraspOutcome::Missed;
        }
        break;

      case Mode::Grasping:
        if (!grasp_outcome_) break;
        if (*grasp_outcome_ == GraspOutcome::Attached) {
          apply(StageInput::GraspClosed, std::nullopt, rec);
        } else {
          abort("GraspMissed", rec);
        }
        grasp_outcome_.reset();
        break;

      case Mode::Returning:
        if (active_.finished()) apply(StageInput::ReturnDone, std::nullopt, rec);
        break;
    }
  }

  void run_teleop(const LeaderInput& in, TickRecord& rec) {
    const KinematicChain& chain = sc_.follower();
    if (!in.present) {
      if (!operator_lost_ && mapping_enabled(stage_.mode)) {
        hold();
        rec.events.push_back({"hold", {{"reason", "operator absent"}}});
      }
      operator_lost_ = true;
      return;
    }
    if (operator_lost_) {
      operator_lost_ = false;
      synced_ = false;
    }
    const auto q_des = teleop_tick(in.q, mapping_enabled(stage_.mode), chain.dof());
    if (!q_des) return;
    if (!synced_) {
      if ((in.q - world_.q).lpNorm<Eigen::Infinity>() >= sc_.sync_tolerance) return;
      synced_ = true;
      rec.events.push_back({"resync", json::object()});
    }
    const JointVector goal = chain.clamp(*q_des);
    if (active_.active() && active_.trajectory.goal() == goal) return;
    const JointTrajectory& base =
        active_.active() ? active_.trajectory : JointTrajectory::hold(world_.q);
    const double t = active_.active() ? active_.elapsed : 0.0;
    active_.trajectory = rate_limited_retarget(chain, base, t, goal);
    active_.elapsed = 0.0;
    rec.teleop_applied = true;
  }

  Scenario sc_;
  std::uint64_t seed_;
  Rng rng_;
  WorldState world_;
  ActiveTrajectory active_;
  StageState stage_;
  DetectionTracker tracker_;
  FeedbackState feedback_;
  TorqueStack torque_;
  LeaderInput prev_input_;
  JointVector leader_qd_;
  bool synced_ = true;
  bool trigger_closed_ = false;
  bool operator_lost_ = false;
  bool lifted_ = false;
  std::optional<double> first_command_;
  std::optional<std::pair<TagDetection, RigidTransform>> pending_detection_;
  std::optional<RigidTransform> grasp_estimate_;
  std::optional<JointVector> q_disconnect_;
  std::optional<GraspOutcome> grasp_outcome_;
  std::optional<std::string> abort_reason_;
  std::set<std::pair<std::size_t, std::size_t>> contacts_;
  std::map<int, double> initial_z_;
};

}  // namespace teleop
