#pragma once

// Serial revolute chains described by per-joint offset + axis, with forward
// kinematics, the geometric Jacobian and a damped-least-squares IK solver.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"

namespace teleop {

using JointVector = Eigen::VectorXd;
using Jacobian = Eigen::Matrix<double, 6, Eigen::Dynamic>;

/// Mass properties of the link that moves with a joint, in that link's frame.
struct LinkInertia {
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about the COM

  void validate(const std::string& where) const {
    if (!(mass >= 0.0) || !std::isfinite(mass)) {
      throw Error(ErrorCode::InvalidArgument, where + ": mass must be >= 0");
    }
    if ((inertia - inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw Error(ErrorCode::InvalidArgument, where + ": inertia tensor not symmetric");
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(inertia);
    const Vec3 p = eig.eigenvalues();
    const double tol = 1e-12 * std::max(1.0, p.cwiseAbs().maxCoeff());
    if (p.minCoeff() < -tol) {
      throw Error(ErrorCode::InvalidArgument, where + ": inertia tensor not PSD");
    }
    if (p(0) + p(1) < p(2) - tol || p(0) + p(2) < p(1) - tol ||
        p(1) + p(2) < p(0) - tol) {
      throw Error(ErrorCode::InvalidArgument,
                  where + ": principal moments violate the triangle inequality");
    }
  }

  static LinkInertia point_mass(double m, const Vec3& at) {
    return {m, at, Mat3::Zero()};
  }
};

struct Joint {
  std::string name;
  RigidTransform offset;  // parent link frame -> this joint's frame at q = 0
  Vec3 axis = Vec3::UnitZ();
  double q_min = -M_PI;
  double q_max = M_PI;
  double v_max = 1.0;
  double a_max = 2.0;
  LinkInertia link;
  double link_radius = 0.0;  // collision capsule around the link segment
};

class KinematicChain {
 public:
  KinematicChain() = default;

  KinematicChain(std::vector<Joint> joints, RigidTransform tool = {},
                 std::string name = {})
      : name_(std::move(name)), joints_(std::move(joints)), tool_(tool) {
    if (joints_.empty()) {
      throw Error(ErrorCode::InvalidArgument, "chain needs at least one joint");
    }
    for (auto& j : joints_) {
      const std::string where = "joint '" + j.name + "'";
      const double n = j.axis.norm();
      if (!(n > 0.0)) throw Error(ErrorCode::InvalidArgument, where + ": zero axis");
      if (std::abs(n - 1.0) > 1e-6) {
        throw Error(ErrorCode::InvalidArgument, where + ": axis is not a unit vector");
      }
      j.axis /= n;
      if (!(j.q_min < j.q_max)) {
        throw Error(ErrorCode::InvalidArgument, where + ": q_min must be < q_max");
      }
      if (!(j.v_max > 0.0) || !(j.a_max > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, where + ": v_max and a_max must be > 0");
      }
      if (j.link_radius < 0.0) {
        throw Error(ErrorCode::InvalidArgument, where + ": negative link radius");
      }
      j.link.validate(where);
    }
  }

  const std::string& name() const { return name_; }
  std::size_t dof() const { return joints_.size(); }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(std::size_t i) const { return joints_.at(i); }
  const RigidTransform& tool() const { return tool_; }

  JointVector lower_limits() const { return collect(&Joint::q_min); }
  JointVector upper_limits() const { return collect(&Joint::q_max); }
  JointVector velocity_limits() const { return collect(&Joint::v_max); }
  JointVector acceleration_limits() const { return collect(&Joint::a_max); }

  bool within_limits(const JointVector& q, double tol = 0.0) const {
    require_dims(static_cast<std::size_t>(q.size()), dof(), "joint vector");
    for (std::size_t i = 0; i < dof(); ++i) {
      if (q(i) < joints_[i].q_min - tol || q(i) > joints_[i].q_max + tol) return false;
    }
    return true;
  }

  JointVector clamp(const JointVector& q) const {
    require_dims(static_cast<std::size_t>(q.size()), dof(), "joint vector");
    return q.cwiseMax(lower_limits()).cwiseMin(upper_limits());
  }

 private:
  JointVector collect(double Joint::*field) const {
    JointVector v(static_cast<Eigen::Index>(joints_.size()));
    for (std::size_t i = 0; i < joints_.size(); ++i) v(i) = joints_[i].*field;
    return v;
  }

  std::string name_;
  std::vector<Joint> joints_;
  RigidTransform tool_;
};

/// Base-frame poses of every link (after its joint rotation) and of the tool.
struct ChainFrames {
  std::vector<RigidTransform> links;
  RigidTransform end_effector;

  /// Joint axis of link i expressed in the base frame.
  Vec3 axis(const KinematicChain& chain, std::size_t i) const {
    return links[i].rotation * chain.joint(i).axis;
  }
};

inline ChainFrames forward_kinematics_frames(const KinematicChain& chain,
                                             const JointVector& q) {
  require_dims(static_cast<std::size_t>(q.size()), chain.dof(), "forward_kinematics");
  ChainFrames out;
  out.links.reserve(chain.dof());
  RigidTransform t;
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Joint& j = chain.joint(i);
    t = t * j.offset * RigidTransform::from_rotation(Rotation::about_axis(j.axis, q(i)));
    out.links.push_back(t);
  }
  out.end_effector = t * chain.tool();
  return out;
}

inline RigidTransform forward_kinematics(const KinematicChain& chain,
                                         const JointVector& q) {
  return forward_kinematics_frames(chain, q).end_effector;
}

/// Geometric Jacobian at the tool point, base frame; rows 0-2 linear, 3-5 angular.
inline Jacobian jacobian(const KinematicChain& chain, const JointVector& q) {
  const ChainFrames frames = forward_kinematics_frames(chain, q);
  const Vec3 p_ee = frames.end_effector.translation;
  Jacobian jac(6, static_cast<Eigen::Index>(chain.dof()));
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Vec3 z = frames.axis(chain, i);
    const Vec3 p = frames.links[i].translation;
    jac.block<3, 1>(0, static_cast<Eigen::Index>(i)) = z.cross(p_ee - p);
    jac.block<3, 1>(3, static_cast<Eigen::Index>(i)) = z;
  }
  return jac;
}

struct IkOptions {
  double damping = 1e-2;
  double max_step = 0.2;  // rad per iteration, max-norm
  int max_iterations = 200;
  double tol_position = 1e-4;
  double tol_orientation = 1e-4;
};

struct IkResult {
  JointVector q;
  int iterations = 0;
};

/// Iterative damped least squares from `seed`, projecting onto the joint
/// limits after every step. Throws NotConverged when the iteration budget
/// runs out (unreachable targets end up here as well).
inline IkResult solve_ik(const KinematicChain& chain, const RigidTransform& target,
                         const JointVector& seed, const IkOptions& opt = {}) {
  require_dims(static_cast<std::size_t>(seed.size()), chain.dof(), "solve_ik seed");
  if (!chain.within_limits(seed, 1e-9)) {
    throw Error(ErrorCode::InvalidArgument, "solve_ik: seed outside joint limits");
  }
  JointVector q = chain.clamp(seed);
  const double lambda2 = opt.damping * opt.damping;
  for (int it = 0;; ++it) {
    const RigidTransform ee = forward_kinematics(chain, q);
    const double ep = position_error(target, ee);
    const double er = orientation_error(target, ee);
    if (ep <= opt.tol_position && er <= opt.tol_orientation) return {q, it};
    if (it >= opt.max_iterations) {
      throw Error(ErrorCode::NotConverged,
                  "solve_ik: no convergence after " + std::to_string(it) +
                      " iterations (position error " + std::to_string(ep) +
                      " m, orientation error " + std::to_string(er) + " rad)");
    }

    Eigen::Matrix<double, 6, 1> err;
    err.head<3>() = target.translation - ee.translation;
    err.tail<3>() = (target.rotation * ee.rotation.transpose()).log();

    const Jacobian jac = jacobian(chain, q);
    const Eigen::Matrix<double, 6, 6> jjt =
        jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
    JointVector dq = jac.transpose() * jjt.ldlt().solve(err);
    const double biggest = dq.cwiseAbs().maxCoeff();
    if (biggest > opt.max_step) dq *= opt.max_step / biggest;
    q = chain.clamp(q + dq);
  }
}

}  // namespace teleop
