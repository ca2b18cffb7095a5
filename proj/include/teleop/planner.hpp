#pragma once

// Time-parameterized joint trajectories.
//
// Every trajectory is stored as knots of a piecewise-constant-acceleration
// motion: between knot k and k+1 each joint follows
//   q(t) = q_k + v_k (t - t_k) + a_k (t - t_k)^2 / 2.
// Three builders produce them: synchronized trapezoids along a joint-space
// polyline (point-to-point moves and Cartesian approaches), and independent
// per-joint time-optimal profiles with a nonzero start velocity (teleop
// retargeting, which must not jump in velocity).

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/kinematics.hpp"

namespace teleop {

struct TrajectoryKnot {
  double t = 0.0;
  JointVector q;
  JointVector v;
  JointVector a;  // holds until the next knot
};

struct JointSample {
  JointVector q;
  JointVector v;
};

class JointTrajectory {
 public:
  JointTrajectory() = default;

  explicit JointTrajectory(std::vector<TrajectoryKnot> knots) : knots_(std::move(knots)) {
    if (knots_.empty()) {
      throw Error(ErrorCode::InvalidArgument, "trajectory needs at least one knot");
    }
    if (knots_.front().t != 0.0) {
      throw Error(ErrorCode::InvalidArgument, "trajectory must start at t = 0");
    }
    for (std::size_t k = 1; k < knots_.size(); ++k) {
      if (!(knots_[k].t > knots_[k - 1].t)) {
        throw Error(ErrorCode::InvalidArgument, "trajectory knot times must increase");
      }
    }
  }

  /// Single-knot trajectory that stays at q.
  static JointTrajectory hold(const JointVector& q) {
    const auto n = q.size();
    return JointTrajectory({{0.0, q, JointVector::Zero(n), JointVector::Zero(n)}});
  }

  bool empty() const { return knots_.empty(); }
  double duration() const { return knots_.empty() ? 0.0 : knots_.back().t; }
  const std::vector<TrajectoryKnot>& waypoints() const { return knots_; }
  const JointVector& start() const { return knots_.front().q; }
  const JointVector& goal() const { return knots_.back().q; }

  /// Exact state at time t; clamps to the endpoints outside [0, duration].
  JointSample sample(double t) const {
    if (knots_.empty()) throw Error(ErrorCode::InvalidArgument, "sampling empty trajectory");
    if (t <= 0.0) return {knots_.front().q, knots_.front().v};
    if (t >= duration()) return {knots_.back().q, knots_.back().v};
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), t,
                                     [](double x, const TrajectoryKnot& k) { return x < k.t; });
    const TrajectoryKnot& k = *(it - 1);
    const double dt = t - k.t;
    return {k.q + k.v * dt + 0.5 * k.a * dt * dt, k.v + k.a * dt};
  }

  bool finished(double t) const { return t >= duration(); }

 private:
  std::vector<TrajectoryKnot> knots_;
};

// ---------------------------------------------------------------------------
// Scalar trapezoid

/// Rest-to-rest trapezoid (or triangle) over a path of length `length`.
struct TrapezoidTiming {
  double length = 0.0;
  double accel = 0.0;
  double peak_speed = 0.0;
  double t_accel = 0.0;
  double t_cruise = 0.0;

  static TrapezoidTiming make(double length, double v_max, double a_max) {
    TrapezoidTiming p;
    p.length = length;
    p.accel = a_max;
    if (length <= 0.0) return p;
    if (length >= v_max * v_max / a_max) {
      p.peak_speed = v_max;
      p.t_accel = v_max / a_max;
      p.t_cruise = (length - v_max * v_max / a_max) / v_max;
    } else {
      p.t_accel = std::sqrt(length / a_max);
      p.peak_speed = a_max * p.t_accel;
    }
    return p;
  }

  double duration() const { return 2.0 * t_accel + t_cruise; }

  struct State {
    double s, sd, sdd;
  };

  /// Path state at time t; `sdd` is the acceleration of the phase starting at t.
  State at(double t) const {
    const double total = duration();
    if (t <= 0.0) return {0.0, 0.0, t_accel > 0.0 ? accel : 0.0};
    if (t >= total) return {length, 0.0, 0.0};
    if (t < t_accel) return {0.5 * accel * t * t, accel * t, accel};
    const double s_a = 0.5 * accel * t_accel * t_accel;
    if (t < t_accel + t_cruise) return {s_a + peak_speed * (t - t_accel), peak_speed, 0.0};
    const double r = total - t;
    return {length - 0.5 * accel * r * r, accel * r, -accel};
  }

  /// Inverse of at(t).s for s in [0, length].
  double time_at(double s) const {
    const double s_a = 0.5 * accel * t_accel * t_accel;
    if (s <= s_a) return std::sqrt(2.0 * s / accel);
    if (s <= length - s_a) return t_accel + (s - s_a) / peak_speed;
    return duration() - std::sqrt(std::max(0.0, 2.0 * (length - s) / accel));
  }
};

/// Synchronized trapezoid along a joint-space polyline. Path speed and
/// acceleration are scaled so that no joint exceeds its own limits on any
/// segment; all joints start and stop together.
inline JointTrajectory time_polyline(const std::vector<JointVector>& vertices,
                                     const JointVector& v_max, const JointVector& a_max) {
  if (vertices.empty()) throw Error(ErrorCode::InvalidArgument, "empty polyline");
  const auto n = vertices.front().size();
  require_dims(static_cast<std::size_t>(v_max.size()), static_cast<std::size_t>(n), "v_max");
  require_dims(static_cast<std::size_t>(a_max.size()), static_cast<std::size_t>(n), "a_max");
  if (!(v_max.array() > 0.0).all() || !(a_max.array() > 0.0).all()) {
    throw Error(ErrorCode::InvalidArgument, "velocity and acceleration limits must be > 0");
  }

  std::vector<JointVector> pts{vertices.front()};
  for (std::size_t k = 1; k < vertices.size(); ++k) {
    require_dims(static_cast<std::size_t>(vertices[k].size()), static_cast<std::size_t>(n),
                 "polyline vertex");
    if ((vertices[k] - pts.back()).norm() > 0.0) pts.push_back(vertices[k]);
  }
  if (pts.size() == 1) return JointTrajectory::hold(pts.front());

  std::vector<double> seg_start{0.0};
  std::vector<JointVector> dir;
  double speed = std::numeric_limits<double>::infinity();
  double accel = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const JointVector delta = pts[k + 1] - pts[k];
    const double len = delta.norm();
    dir.push_back(delta / len);
    seg_start.push_back(seg_start.back() + len);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double c = std::abs(dir.back()(i));
      if (c > 0.0) {
        speed = std::min(speed, v_max(i) / c);
        accel = std::min(accel, a_max(i) / c);
      }
    }
  }
  const double total = seg_start.back();
  const TrapezoidTiming timing = TrapezoidTiming::make(total, speed, accel);
  const double t_end = timing.duration();

  // Knots at phase switches (vertex = -1) and at every interior vertex.
  struct Event {
    double t;
    int vertex;
  };
  std::vector<Event> events{{0.0, -1},
                            {timing.t_accel, -1},
                            {timing.t_accel + timing.t_cruise, -1}};
  for (std::size_t k = 1; k + 1 < seg_start.size(); ++k) {
    events.push_back({timing.time_at(seg_start[k]), static_cast<int>(k)});
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });

  std::vector<TrajectoryKnot> knots;
  std::size_t seg = 0;
  for (const Event& ev : events) {
    if (!(ev.t < t_end)) continue;
    const auto st = timing.at(ev.t);
    JointVector q;
    if (ev.vertex >= 0) {
      seg = std::max(seg, static_cast<std::size_t>(ev.vertex));
      q = pts[seg];
    } else {
      while (seg + 1 < dir.size() && st.s >= seg_start[seg + 1]) ++seg;
      q = pts[seg] + dir[seg] * (st.s - seg_start[seg]);
    }
    TrajectoryKnot k{ev.t, std::move(q), dir[seg] * st.sd, dir[seg] * st.sdd};
    if (!knots.empty() && !(ev.t > knots.back().t)) {
      // Coincident events: keep the one that moved onto the later segment.
      if (ev.vertex >= 0) knots.back() = std::move(k);
      continue;
    }
    knots.push_back(std::move(k));
  }
  knots.push_back({t_end, pts.back(), JointVector::Zero(n), JointVector::Zero(n)});
  return JointTrajectory(std::move(knots));
}

inline void require_within_limits(const KinematicChain& chain, const JointVector& q,
                                  const char* what) {
  if (!chain.within_limits(q, 1e-12)) {
    throw Error(ErrorCode::GoalOutOfLimits, std::string(what) + " outside joint limits");
  }
}

/// Point-to-point synchronized trapezoid; the last knot equals q_goal exactly.
inline JointTrajectory plan_joint_trajectory(const KinematicChain& chain,
                                             const JointVector& q_start,
                                             const JointVector& q_goal,
                                             const JointVector& v_max,
                                             const JointVector& a_max) {
  require_dims(static_cast<std::size_t>(q_start.size()), chain.dof(), "q_start");
  require_dims(static_cast<std::size_t>(q_goal.size()), chain.dof(), "q_goal");
  require_within_limits(chain, q_start, "start configuration");
  require_within_limits(chain, q_goal, "goal configuration");
  return time_polyline({q_start, q_goal}, v_max, a_max);
}

inline JointTrajectory plan_joint_trajectory(const KinematicChain& chain,
                                             const JointVector& q_start,
                                             const JointVector& q_goal) {
  return plan_joint_trajectory(chain, q_start, q_goal, chain.velocity_limits(),
                               chain.acceleration_limits());
}

struct CartesianStep {
  double position = 0.005;     // m
  double orientation = 0.02;  // rad
};

/// Joint-space vertices of a straight-line + slerp path, solved waypoint by
/// waypoint with IK seeded from the previous solution. The first vertex is
/// q_start; a start already within IK tolerance yields just that vertex.
inline std::vector<JointVector> cartesian_waypoints(const KinematicChain& chain,
                                                   const JointVector& q_start,
                                                   const RigidTransform& target,
                                                   const CartesianStep& step = {},
                                                   const IkOptions& ik = {}) {
  require_dims(static_cast<std::size_t>(q_start.size()), chain.dof(), "q_start");
  require_within_limits(chain, q_start, "start configuration");
  if (!target.translation.allFinite() || !target.rotation.matrix().allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "Cartesian target must be finite");
  }
  if (!(step.position > 0.0) || !(step.orientation > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "Cartesian step sizes must be > 0");
  }
  const RigidTransform start = forward_kinematics(chain, q_start);
  const double dist = position_error(start, target);
  const double angle = orientation_error(start, target);
  if (dist <= ik.tol_position && angle <= ik.tol_orientation) return {q_start};
  const int steps = std::max({1, static_cast<int>(std::ceil(dist / step.position)),
                              static_cast<int>(std::ceil(angle / step.orientation))});
  std::vector<JointVector> path{q_start};
  path.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = 1; k <= steps; ++k) {
    const double s = k == steps ? 1.0 : static_cast<double>(k) / steps;
    try {
      path.push_back(solve_ik(chain, interpolate(start, target, s), path.back(), ik).q);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotConverged) throw;
      throw Error(ErrorCode::IkFailure, "Cartesian approach waypoint " + std::to_string(k) +
                                            "/" + std::to_string(steps) + ": " + e.what());
    }
  }
  return path;
}

/// The Cartesian path above, timed as one synchronized polyline.
inline JointTrajectory plan_cartesian_approach(const KinematicChain& chain,
                                               const JointVector& q_start,
                                               const RigidTransform& target,
                                               const CartesianStep& step = {},
                                               const IkOptions& ik = {}) {
  const auto path = cartesian_waypoints(chain, q_start, target, step, ik);
  if (path.size() == 1) return JointTrajectory::hold(q_start);
  return time_polyline(path, chain.velocity_limits(), chain.acceleration_limits());
}

// ---------------------------------------------------------------------------
// Retargeting

/// One joint's time-optimal motion from (x0, v0) to rest at x_goal.
struct ScalarProfile {
  struct Phase {
    double duration;
    double accel;
  };
  double x0 = 0.0;
  double v0 = 0.0;
  double x_goal = 0.0;
  std::vector<Phase> phases;

  static ScalarProfile make(double x0, double v0, double x_goal, double v_max, double a_max) {
    ScalarProfile p{x0, v0, x_goal, {}};
    const double d = x_goal - x0;
    if (d == 0.0 && v0 == 0.0) return p;
    const double stop = v0 * std::abs(v0) / (2.0 * a_max);
    double sigma = signum_of(d - stop);
    if (sigma == 0.0) {
      p.phases.push_back({std::abs(v0) / a_max, -signum_of(v0) * a_max});
      return p;
    }
    const double u0 = sigma * v0;
    const double dist = sigma * d;
    double peak = std::sqrt(std::max(0.0, a_max * dist + 0.5 * u0 * u0));
    double cruise = 0.0;
    if (peak > v_max) {
      peak = v_max;
      cruise = std::max(
          0.0, (dist - (v_max * v_max - u0 * u0) / (2.0 * a_max) - v_max * v_max / (2.0 * a_max)) /
                   v_max);
    }
    const double ramp = std::abs(peak - u0) / a_max;
    if (ramp > 0.0) p.phases.push_back({ramp, sigma * a_max * signum_of(peak - u0)});
    if (cruise > 0.0) p.phases.push_back({cruise, 0.0});
    if (peak > 0.0) p.phases.push_back({peak / a_max, -sigma * a_max});
    return p;
  }

  double duration() const {
    double t = 0.0;
    for (const auto& ph : phases) t += ph.duration;
    return t;
  }

  std::vector<double> boundaries() const {
    std::vector<double> b;
    double t = 0.0;
    for (const auto& ph : phases) b.push_back(t += ph.duration);
    return b;
  }

  /// Position, velocity, and the acceleration of the phase active just after t.
  void at(double t, double& x, double& v, double& a) const {
    x = x0;
    v = v0;
    double start = 0.0;
    for (std::size_t k = 0; k < phases.size(); ++k) {
      const auto& ph = phases[k];
      const bool last = k + 1 == phases.size();
      const double end = start + ph.duration;
      if (t < end) {
        const double dt = t - start;
        x += v * dt + 0.5 * ph.accel * dt * dt;
        v += ph.accel * dt;
        a = ph.accel;
        return;
      }
      x += v * ph.duration + 0.5 * ph.accel * ph.duration * ph.duration;
      v += ph.accel * ph.duration;
      start = end;
      if (last) break;
    }
    x = x_goal;
    v = 0.0;
    a = 0.0;
  }

 private:
  static double signum_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
};

/// Per-joint time-optimal profiles from (q0, v0) to rest at q_goal.
inline JointTrajectory plan_from_state(const JointVector& q0, const JointVector& v0,
                                       const JointVector& q_goal, const JointVector& v_max,
                                       const JointVector& a_max) {
  const auto n = q0.size();
  std::vector<ScalarProfile> profiles;
  std::vector<double> times{0.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    profiles.push_back(ScalarProfile::make(q0(i), v0(i), q_goal(i), v_max(i), a_max(i)));
    for (double b : profiles.back().boundaries()) times.push_back(b);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.size() == 1) {
    return JointTrajectory({{0.0, q0, v0, JointVector::Zero(n)}});
  }
  std::vector<TrajectoryKnot> knots;
  for (std::size_t k = 0; k < times.size(); ++k) {
    TrajectoryKnot knot{times[k], JointVector(n), JointVector(n), JointVector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      profiles[static_cast<std::size_t>(i)].at(times[k], knot.q(i), knot.v(i), knot.a(i));
    }
    if (k == 0) {
      knot.q = q0;
      knot.v = v0;
    }
    knots.push_back(std::move(knot));
  }
  return JointTrajectory(std::move(knots));
}

/// Replaces the active trajectory with a fresh plan from its state at
/// `t_active` toward q_des, clamped into the joint limits. The new plan
/// starts with the old velocity, so preemption never jumps in velocity.
inline JointTrajectory rate_limited_retarget(const KinematicChain& chain,
                                             const JointTrajectory& active, double t_active,
                                             const JointVector& q_des) {
  require_dims(static_cast<std::size_t>(q_des.size()), chain.dof(), "retarget q_des");
  const JointSample now = active.sample(t_active);
  const JointVector goal = chain.clamp(q_des);
  return plan_from_state(now.q, now.v, goal, chain.velocity_limits(),
                         chain.acceleration_limits());
}

}  // namespace teleop
