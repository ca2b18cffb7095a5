#pragma once

// Simulated fiducial detection and the pose chain that turns a detection into
// an object pose and a grasp pose in the robot base frame.

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"

namespace teleop {

using Rng = std::mt19937_64;

/// Camera rigidly mounted on the end effector; its optical axis is +z.
struct CameraModel {
  RigidTransform extrinsics;  // end-effector frame -> camera frame
  double range = 1.5;         // m
  double half_fov = 0.7;      // rad
  double sigma_position = 0.0;
  double sigma_orientation = 0.0;

  void validate() const {
    if (!(range > 0.0)) throw Error(ErrorCode::InvalidArgument, "camera range must be > 0");
    if (!(half_fov > 0.0 && half_fov <= M_PI / 2.0)) {
      throw Error(ErrorCode::InvalidArgument, "camera half-FOV must be in (0, pi/2]");
    }
    if (sigma_position < 0.0 || sigma_orientation < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "camera noise sigmas must be >= 0");
    }
  }
};

struct FiducialTag {
  int id = 0;
  RigidTransform pose;  // world frame
};

struct TagDetection {
  int tag_id = 0;
  RigidTransform pose;  // tag in camera frame
  double timestamp = 0.0;
};

/// True when the tag centre lies inside the range-limited view cone.
inline bool in_view(const CameraModel& camera, const Vec3& p_camera) {
  if (!(p_camera.z() > 0.0)) return false;
  if (p_camera.norm() > camera.range) return false;
  return std::atan2(p_camera.head<2>().norm(), p_camera.z()) <= camera.half_fov;
}

/// Zero-mean perturbation in the camera frame: Gaussian translation noise
/// per axis, rotation about a uniformly random axis by a Gaussian angle.
inline RigidTransform perturb(const RigidTransform& pose, double sigma_p, double sigma_r,
                              Rng& rng) {
  RigidTransform out = pose;
  if (sigma_p > 0.0) {
    std::normal_distribution<double> n(0.0, sigma_p);
    const double dx = n(rng), dy = n(rng), dz = n(rng);
    out.translation += Vec3(dx, dy, dz);
  }
  if (sigma_r > 0.0) {
    std::normal_distribution<double> unit(0.0, 1.0);
    Vec3 axis;
    do {
      const double ax = unit(rng), ay = unit(rng), az = unit(rng);
      axis = Vec3(ax, ay, az);
    } while (axis.norm() < 1e-12);
    std::normal_distribution<double> angle(0.0, sigma_r);
    out.rotation = Rotation::about_axis(axis, angle(rng)) * out.rotation;
  }
  return out;
}

inline std::optional<TagDetection> simulate_detection(const FiducialTag& tag,
                                                      const CameraModel& camera,
                                                      const RigidTransform& ee_pose,
                                                      double timestamp, Rng& rng) {
  const RigidTransform camera_in_world = ee_pose * camera.extrinsics;
  const RigidTransform truth = camera_in_world.inverse() * tag.pose;
  if (!in_view(camera, truth.translation)) return std::nullopt;
  return TagDetection{tag.id,
                      perturb(truth, camera.sigma_position, camera.sigma_orientation, rng),
                      timestamp};
}

/// The first visible tag among `tags`; scenes carry at most one target tag.
inline std::optional<TagDetection> simulate_detection(std::span<const FiducialTag> tags,
                                                      const CameraModel& camera,
                                                      const RigidTransform& ee_pose,
                                                      double timestamp, Rng& rng) {
  for (const auto& tag : tags) {
    if (auto det = simulate_detection(tag, camera, ee_pose, timestamp, rng)) return det;
  }
  return std::nullopt;
}

/// B_T_obj = B_T_E * E_T_C * C_T_tag
inline RigidTransform object_pose_from_detection(const RigidTransform& ee_pose,
                                                 const CameraModel& camera,
                                                 const TagDetection& det) {
  return ee_pose * camera.extrinsics * det.pose;
}

/// B_T_E^grasp = B_T_obj * obj_T_grasp
inline RigidTransform grasp_pose_from_object(const RigidTransform& object_pose,
                                             const RigidTransform& grasp_offset) {
  return object_pose * grasp_offset;
}

/// Chordal mean: averaged translation, rotation = projection of the summed
/// rotation matrices back onto SO(3).
inline RigidTransform fuse_poses(std::span<const RigidTransform> poses) {
  if (poses.empty()) throw Error(ErrorCode::EmptyInput, "no poses to fuse");
  if (poses.size() == 1) return poses.front();
  Vec3 p = Vec3::Zero();
  Mat3 r = Mat3::Zero();
  for (const auto& pose : poses) {
    p += pose.translation;
    r += pose.rotation.matrix();
  }
  const double n = static_cast<double>(poses.size());
  return {Rotation::from_matrix(project_to_rotation(r / n)), p / n};
}

/// Settings for when a detection stream counts as reliable and how many
/// recent estimates feed the object pose.
struct DetectionPolicy {
  int consecutive = 1;
  double consistency_position = 0.005;
  double consistency_orientation = 0.02;
  int estimate_window = 10;
};

/// Tracks consecutive, mutually consistent base-frame object estimates.
class DetectionTracker {
 public:
  explicit DetectionTracker(DetectionPolicy policy = {}) : policy_(policy) {
    if (policy_.consecutive < 1 || policy_.estimate_window < 1) {
      throw Error(ErrorCode::InvalidArgument, "detection policy counts must be >= 1");
    }
  }

  /// Feed the estimate produced this tick, or nullopt when nothing was seen.
  void update(const std::optional<RigidTransform>& object_estimate) {
    if (!object_estimate) {
      streak_ = 0;
      return;
    }
    const bool consistent =
        !window_.empty() && streak_ > 0 &&
        position_error(window_.back(), *object_estimate) <= policy_.consistency_position &&
        orientation_error(window_.back(), *object_estimate) <= policy_.consistency_orientation;
    streak_ = consistent ? streak_ + 1 : 1;
    window_.push_back(*object_estimate);
    while (window_.size() > static_cast<std::size_t>(policy_.estimate_window)) {
      window_.pop_front();
    }
  }

  bool reliable() const { return streak_ >= policy_.consecutive; }
  bool has_estimate() const { return !window_.empty(); }
  std::size_t samples() const { return window_.size(); }

  RigidTransform estimate() const {
    const std::vector<RigidTransform> poses(window_.begin(), window_.end());
    return fuse_poses(poses);
  }

  void reset() {
    window_.clear();
    streak_ = 0;
  }

 private:
  DetectionPolicy policy_;
  std::deque<RigidTransform> window_;
  int streak_ = 0;
};

}  // namespace teleop
