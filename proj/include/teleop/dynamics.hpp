#pragma once

// Rigid-body inverse dynamics (recursive Newton-Euler) and the torque stack
// commanded to the leader arm: gravity + friction + joint-difference feedback
// + trigger feedback.
//
// Leader torque vectors carry one entry per mirrored arm joint followed by a
// final entry for the handle trigger, so their length is chain.dof() + 1.

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/kinematics.hpp"

namespace teleop {

inline const Vec3 kDefaultGravity{0.0, 0.0, -9.81};

/// tau = M(q) qdd + C(q, qd) qd + g(q), computed in the base frame.
inline JointVector rnea(const KinematicChain& chain, const JointVector& q,
                        const JointVector& qd, const JointVector& qdd,
                        const Vec3& gravity = kDefaultGravity) {
  const std::size_t n = chain.dof();
  require_dims(static_cast<std::size_t>(q.size()), n, "rnea q");
  require_dims(static_cast<std::size_t>(qd.size()), n, "rnea qd");
  require_dims(static_cast<std::size_t>(qdd.size()), n, "rnea qdd");
  if (!gravity.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "rnea: gravity must be finite");
  }

  const ChainFrames frames = forward_kinematics_frames(chain, q);
  std::vector<Vec3> origin(n), axis(n), com(n), force(n), moment(n);

  // Outward pass. The base is given an upward acceleration equal to -gravity,
  // which folds the gravity load into the inertial forces.
  Vec3 w = Vec3::Zero();
  Vec3 wd = Vec3::Zero();
  Vec3 a = -gravity;
  Vec3 p_prev = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& link = chain.joint(i).link;
    const Mat3& rot = frames.links[i].rotation.matrix();
    origin[i] = frames.links[i].translation;
    axis[i] = rot * chain.joint(i).axis;

    const Vec3 r = origin[i] - p_prev;
    a += wd.cross(r) + w.cross(w.cross(r));
    const Vec3 spin = axis[i] * qd(i);
    wd += axis[i] * qdd(i) + w.cross(spin);
    w += spin;

    com[i] = rot * link.com;
    const Vec3 a_com = a + wd.cross(com[i]) + w.cross(w.cross(com[i]));
    const Mat3 inertia = rot * link.inertia * rot.transpose();
    force[i] = link.mass * a_com;
    moment[i] = inertia * wd + w.cross(inertia * w);
    p_prev = origin[i];
  }

  // Inward pass: moments are taken about each joint origin.
  JointVector tau(static_cast<Eigen::Index>(n));
  Vec3 f_next = Vec3::Zero();
  Vec3 n_next = Vec3::Zero();
  Vec3 p_next = Vec3::Zero();
  for (std::size_t k = n; k-- > 0;) {
    const Vec3 f = force[k] + f_next;
    const Vec3 m = moment[k] + com[k].cross(force[k]) + n_next +
                   (k + 1 < n ? (p_next - origin[k]).cross(f_next) : Vec3::Zero());
    tau(static_cast<Eigen::Index>(k)) = axis[k].dot(m);
    f_next = f;
    n_next = m;
    p_next = origin[k];
  }
  return tau;
}

inline JointVector gravity_torque(const KinematicChain& chain, const JointVector& q,
                                  const Vec3& gravity = kDefaultGravity) {
  const auto n = static_cast<Eigen::Index>(chain.dof());
  return rnea(chain, q, JointVector::Zero(n), JointVector::Zero(n), gravity);
}

/// Coriolis/centrifugal torque C(q, qd) qd.
inline JointVector velocity_torque(const KinematicChain& chain, const JointVector& q,
                                   const JointVector& qd) {
  return rnea(chain, q, qd, JointVector::Zero(static_cast<Eigen::Index>(chain.dof())),
              Vec3::Zero());
}

/// Joint-space inertia matrix, one RNEA call per column.
inline Eigen::MatrixXd mass_matrix(const KinematicChain& chain, const JointVector& q) {
  const auto n = static_cast<Eigen::Index>(chain.dof());
  Eigen::MatrixXd m(n, n);
  const JointVector zero = JointVector::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    m.col(j) = rnea(chain, q, zero, JointVector::Unit(n, j), Vec3::Zero());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Friction

struct FrictionParams {
  JointVector k_static;
  JointVector k_viscous;
  JointVector velocity_threshold;

  static FrictionParams zeros(std::size_t n) {
    const auto m = static_cast<Eigen::Index>(n);
    return {JointVector::Zero(m), JointVector::Zero(m), JointVector::Constant(m, 1e-3)};
  }

  void validate(std::size_t n) const {
    require_dims(static_cast<std::size_t>(k_static.size()), n, "friction k_static");
    require_dims(static_cast<std::size_t>(k_viscous.size()), n, "friction k_viscous");
    require_dims(static_cast<std::size_t>(velocity_threshold.size()), n,
                 "friction velocity_threshold");
    if ((k_static.array() < 0.0).any() || (k_viscous.array() < 0.0).any()) {
      throw Error(ErrorCode::InvalidArgument, "friction coefficients must be >= 0");
    }
    if (!(velocity_threshold.array() > 0.0).all()) {
      throw Error(ErrorCode::InvalidArgument, "friction velocity threshold must be > 0");
    }
  }
};

inline double signum(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Static branch below the threshold, viscous branch at or above it.
inline JointVector friction_torque(const FrictionParams& params, const JointVector& qd) {
  const auto n = qd.size();
  params.validate(static_cast<std::size_t>(n));
  JointVector tau(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    tau(i) = std::abs(qd(i)) < params.velocity_threshold(i)
                 ? params.k_static(i) * signum(qd(i))
                 : params.k_viscous(i) * qd(i);
  }
  return tau;
}

// ---------------------------------------------------------------------------
// Joint-difference feedback

struct CompensationGains {
  JointVector kp;
  JointVector kd;
  JointVector ki;
  double error_threshold = 0.05;
  double limit_margin = 0.15;
  double integral_clamp = 0.5;  // N*m bound on the integral contribution

  static CompensationGains defaults(std::size_t n) {
    const auto m = static_cast<Eigen::Index>(n);
    return {JointVector::Constant(m, 10.0), JointVector::Constant(m, 1.0),
            JointVector::Constant(m, 0.5)};
  }

  void validate(std::size_t n) const {
    require_dims(static_cast<std::size_t>(kp.size()), n, "gains kp");
    require_dims(static_cast<std::size_t>(kd.size()), n, "gains kd");
    require_dims(static_cast<std::size_t>(ki.size()), n, "gains ki");
    if ((kp.array() < 0.0).any() || (kd.array() < 0.0).any() || (ki.array() < 0.0).any() ||
        error_threshold < 0.0 || integral_clamp < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "compensation gains must be >= 0");
    }
    if (!(limit_margin > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "soft-limit margin must be > 0");
    }
  }
};

/// Integral accumulator of the feedback PID, owned by the caller.
struct FeedbackState {
  JointVector integral;
};

struct FeedbackOutput {
  JointVector torque;
  FeedbackState state;
};

/// Restoring torque -(Kp e + Kd de + Ki int e), e = q_L - q_B, applied only on
/// joints whose error exceeds the threshold while the leader joint sits within
/// the soft-limit margin. Inactive joints output zero and drop their integral.
inline FeedbackOutput joint_feedback_torque(const CompensationGains& gains,
                                            const KinematicChain& leader,
                                            const JointVector& q_leader,
                                            const JointVector& q_follower,
                                            const JointVector& qd_leader,
                                            const JointVector& qd_follower, double dt,
                                            const FeedbackState& state) {
  const std::size_t n = leader.dof();
  gains.validate(n);
  require_dims(static_cast<std::size_t>(q_leader.size()), n, "feedback q_leader");
  require_dims(static_cast<std::size_t>(q_follower.size()), n, "feedback q_follower");
  require_dims(static_cast<std::size_t>(qd_leader.size()), n, "feedback qd_leader");
  require_dims(static_cast<std::size_t>(qd_follower.size()), n, "feedback qd_follower");
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "feedback dt must be > 0");

  const auto m = static_cast<Eigen::Index>(n);
  FeedbackOutput out{JointVector::Zero(m),
                     {state.integral.size() == m ? state.integral : JointVector::Zero(m)}};
  for (Eigen::Index i = 0; i < m; ++i) {
    const Joint& j = leader.joint(static_cast<std::size_t>(i));
    const double e = q_leader(i) - q_follower(i);
    const bool near_limit = q_leader(i) >= j.q_max - gains.limit_margin ||
                            q_leader(i) <= j.q_min + gains.limit_margin;
    if (!(std::abs(e) > gains.error_threshold && near_limit)) {
      out.state.integral(i) = 0.0;
      continue;
    }
    out.state.integral(i) += e * dt;
    double integral_term = gains.ki(i) * out.state.integral(i);
    if (std::abs(integral_term) > gains.integral_clamp) {
      integral_term = std::copysign(gains.integral_clamp, integral_term);
      if (gains.ki(i) > 0.0) out.state.integral(i) = integral_term / gains.ki(i);
    }
    const double de = qd_leader(i) - qd_follower(i);
    out.torque(i) = -(gains.kp(i) * e + gains.kd(i) * de + integral_term);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trigger

/// Spring return on the trigger plus a constant offset while the follower
/// gripper holds an object. Positive torque acts against the pull.
struct TriggerParams {
  double spring = 0.2;            // N*m/rad
  double contact_feedback = 0.1;  // N*m
  double max_angle = 0.5;         // rad at full pull
};

inline JointVector trigger_torque(const TriggerParams& params, std::size_t arm_dof,
                                  double trigger_angle, bool grasp_contact) {
  JointVector tau = JointVector::Zero(static_cast<Eigen::Index>(arm_dof + 1));
  tau(static_cast<Eigen::Index>(arm_dof)) =
      params.spring * trigger_angle + (grasp_contact ? params.contact_feedback : 0.0);
  return tau;
}

// ---------------------------------------------------------------------------
// Full stack

struct TorqueStack {
  JointVector grav;
  JointVector fric;
  JointVector joint;
  JointVector trig;
  JointVector total;
};

struct LeaderState {
  JointVector q;
  JointVector qd;
  JointVector qdd;
  double trigger_angle = 0.0;
};

struct LeaderModel {
  KinematicChain chain;
  FrictionParams friction;
  CompensationGains gains;
  TriggerParams trigger;
  Vec3 gravity = kDefaultGravity;
  /// Off: gravity load g(q) only. On: full RNEA with the measured qd and qdd.
  bool full_inverse_dynamics = false;
};

struct LeaderTorqueOutput {
  TorqueStack stack;
  FeedbackState feedback;
};

inline JointVector append_zero(const JointVector& v) {
  JointVector out = JointVector::Zero(v.size() + 1);
  out.head(v.size()) = v;
  return out;
}

inline LeaderTorqueOutput total_leader_torque(const LeaderModel& model,
                                              const LeaderState& leader,
                                              const JointVector& q_follower,
                                              const JointVector& qd_follower,
                                              bool grasp_contact, double dt,
                                              const FeedbackState& feedback) {
  const KinematicChain& chain = model.chain;
  const std::size_t n = chain.dof();
  const JointVector grav =
      model.full_inverse_dynamics
          ? rnea(chain, leader.q, leader.qd, leader.qdd, model.gravity)
          : gravity_torque(chain, leader.q, model.gravity);
  const JointVector fric = friction_torque(model.friction, leader.qd);
  FeedbackOutput fb = joint_feedback_torque(model.gains, chain, leader.q, q_follower,
                                            leader.qd, qd_follower, dt, feedback);

  LeaderTorqueOutput out;
  out.stack.grav = append_zero(grav);
  out.stack.fric = append_zero(fric);
  out.stack.joint = append_zero(fb.torque);
  out.stack.trig = trigger_torque(model.trigger, n, leader.trigger_angle, grasp_contact);
  out.stack.total = out.stack.grav + out.stack.fric + out.stack.joint + out.stack.trig;
  out.feedback = std::move(fb.state);
  return out;
}

}  // namespace teleop
