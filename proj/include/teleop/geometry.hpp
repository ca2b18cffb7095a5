#pragma once

// SE(3)/SO(3) value types and the alignment-error metrics.
//
// Rotations are stored as 3x3 matrices. Quaternions exist only as a wire
// representation (UnitQuaternion) and as the slerp workhorse.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "teleop/error.hpp"

namespace teleop {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Drift above which products of rotations are projected back onto SO(3).
inline constexpr double kOrthonormalDrift = 1e-9;

inline double orthonormality_drift(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity())
      .cwiseAbs()
      .rowwise()
      .sum()
      .maxCoeff();
}

/// Nearest rotation in the Frobenius sense (polar factor via SVD).
inline Mat3 project_to_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

struct UnitQuaternion;

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return {}; }

  /// Accepts a matrix within 1e-9 of SO(3); small drift is projected away.
  static Rotation from_matrix(const Mat3& m) {
    if (!m.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "rotation has non-finite entries");
    }
    const double drift = orthonormality_drift(m);
    if (drift > 1e-6 || m.determinant() < 0.0) {
      throw Error(ErrorCode::InvalidArgument,
                  "matrix is not a proper rotation (drift " +
                      std::to_string(drift) + ")");
    }
    Rotation r;
    r.m_ = drift > kOrthonormalDrift ? project_to_rotation(m) : m;
    return r;
  }

  static Rotation about_axis(const Vec3& axis, double angle) {
    Rotation r;
    r.m_ = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    return r;
  }

  static Rotation rot_x(double a) { return about_axis(Vec3::UnitX(), a); }
  static Rotation rot_y(double a) { return about_axis(Vec3::UnitY(), a); }
  static Rotation rot_z(double a) { return about_axis(Vec3::UnitZ(), a); }

  const Mat3& matrix() const { return m_; }

  Rotation transpose() const {
    Rotation r;
    r.m_ = m_.transpose();
    return r;
  }
  Rotation inverse() const { return transpose(); }

  Rotation operator*(const Rotation& other) const {
    Rotation r;
    r.m_ = m_ * other.m_;
    if (orthonormality_drift(r.m_) > kOrthonormalDrift) {
      r.m_ = project_to_rotation(r.m_);
    }
    return r;
  }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Rotation vector (axis * angle), angle in [0, pi].
  Vec3 log() const {
    const Eigen::AngleAxisd aa(m_);
    return aa.axis() * aa.angle();
  }

  bool operator==(const Rotation& other) const { return m_ == other.m_; }

 private:
  Mat3 m_;
};

/// Wire form of a Rotation; canonicalized so that w >= 0.
struct UnitQuaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static UnitQuaternion from_rotation(const Rotation& r) {
    Eigen::Quaterniond q(r.matrix());
    q.normalize();
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    return {q.w(), q.x(), q.y(), q.z()};
  }

  Rotation to_rotation() const {
    Eigen::Quaterniond q(w, x, y, z);
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error(ErrorCode::InvalidArgument, "quaternion has zero or non-finite norm");
    }
    q.coeffs() /= n;
    return Rotation::from_matrix(q.toRotationMatrix());
  }

  bool operator==(const UnitQuaternion&) const = default;
};

struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& p) {
    return {Rotation::identity(), p};
  }
  static RigidTransform from_rotation(const Rotation& r) {
    return {r, Vec3::Zero()};
  }

  RigidTransform operator*(const RigidTransform& b) const {
    return {rotation * b.rotation, rotation * b.translation + translation};
  }

  Vec3 operator*(const Vec3& point) const {
    return rotation * point + translation;
  }

  RigidTransform inverse() const {
    const Rotation rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation.matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  bool operator==(const RigidTransform& other) const {
    return rotation == other.rotation && translation == other.translation;
  }
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return a * b;
}

inline RigidTransform inverse(const RigidTransform& t) { return t.inverse(); }

/// Euclidean distance between desired and achieved positions.
inline double position_error(const Vec3& p_d, const Vec3& p_ee) {
  return (p_ee - p_d).norm();
}

/// Geodesic angle between two rotations, acos((tr(Rd^T Ree) - 1) / 2).
/// Evaluated as atan2(sin, cos) of the same angle; plain acos loses half the
/// digits near 0 and pi.
inline double orientation_error(const Rotation& r_d, const Rotation& r_ee) {
  const Mat3 r = r_d.matrix().transpose() * r_ee.matrix();
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * s.norm(), c);
}

inline double position_error(const RigidTransform& desired,
                             const RigidTransform& achieved) {
  return position_error(desired.translation, achieved.translation);
}

inline double orientation_error(const RigidTransform& desired,
                                const RigidTransform& achieved) {
  return orientation_error(desired.rotation, achieved.rotation);
}

/// Linear in translation, shortest-path slerp in rotation.
inline RigidTransform interpolate(const RigidTransform& t0,
                                  const RigidTransform& t1, double s) {
  if (!(s >= 0.0 && s <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "interpolation parameter outside [0, 1]");
  }
  if (s == 0.0) return t0;
  if (s == 1.0) return t1;
  const Eigen::Quaterniond q0(t0.rotation.matrix());
  const Eigen::Quaterniond q1(t1.rotation.matrix());
  const Eigen::Quaterniond q = q0.slerp(s, q1).normalized();
  return {Rotation::from_matrix(q.toRotationMatrix()),
          (1.0 - s) * t0.translation + s * t1.translation};
}

}  // namespace teleop
