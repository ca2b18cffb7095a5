#pragma once

// Kinematic simulation of the follower arm, its gripper, the tagged target
// object and static obstacles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/kinematics.hpp"
#include "teleop/perception.hpp"
#include "teleop/planner.hpp"

namespace teleop {

// ---------------------------------------------------------------------------
// Collision geometry

struct CollisionShape {
  enum class Kind { Sphere, Box, Capsule };

  Kind kind = Kind::Sphere;
  RigidTransform pose;
  // Sphere: dims.x = radius. Box: half extents (axis aligned, centred at
  // pose.translation). Capsule: dims.x = radius, dims.y = half length of the
  // core segment along the pose z axis.
  Vec3 dims = Vec3::Zero();
  std::string name;

  static CollisionShape sphere(const Vec3& centre, double radius, std::string name = {}) {
    return {Kind::Sphere, RigidTransform::from_translation(centre), Vec3(radius, 0, 0),
            std::move(name)};
  }
  static CollisionShape box(const Vec3& centre, const Vec3& half_extents, std::string name = {}) {
    return {Kind::Box, RigidTransform::from_translation(centre), half_extents, std::move(name)};
  }
  static CollisionShape capsule(const RigidTransform& pose, double radius, double half_length,
                                std::string name = {}) {
    return {Kind::Capsule, pose, Vec3(radius, half_length, 0), std::move(name)};
  }

  void validate() const {
    switch (kind) {
      case Kind::Sphere:
        if (!(dims.x() > 0.0)) throw Error(ErrorCode::InvalidArgument, "sphere radius must be > 0");
        break;
      case Kind::Box:
        if (!(dims.array() > 0.0).all()) {
          throw Error(ErrorCode::InvalidArgument, "box half extents must be > 0");
        }
        break;
      case Kind::Capsule:
        if (!(dims.x() > 0.0) || !(dims.y() > 0.0)) {
          throw Error(ErrorCode::InvalidArgument, "capsule radius and length must be > 0");
        }
        break;
    }
  }
};

inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

/// Closest distance between segments [p1,q1] and [p2,q2].
inline double segment_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2,
                                       const Vec3& q2) {
  const Vec3 d1 = q1 - p1;
  const Vec3 d2 = q2 - p2;
  const Vec3 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  double s = 0.0;
  double t = 0.0;
  if (a <= 0.0 && e <= 0.0) return r.norm();
  if (a <= 0.0) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 0.0) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > 0.0 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + d1 * s) - (p2 + d2 * t)).norm();
}

inline double point_box_distance(const Vec3& p, const Vec3& centre, const Vec3& half) {
  return ((p - centre).cwiseAbs() - half).cwiseMax(0.0).norm();
}

/// Distance along a segment to a box is convex in the segment parameter, so a
/// golden-section search finds the minimum.
inline double segment_box_distance(const Vec3& a, const Vec3& b, const Vec3& centre,
                                   const Vec3& half) {
  const auto f = [&](double t) { return point_box_distance(a + t * (b - a), centre, half); };
  constexpr double kInvPhi = 0.6180339887498949;
  double lo = 0.0, hi = 1.0;
  double x1 = hi - kInvPhi * (hi - lo), x2 = lo + kInvPhi * (hi - lo);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 80 && hi - lo > 1e-15; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kInvPhi * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kInvPhi * (hi - lo);
      f2 = f(x2);
    }
  }
  return std::min({f(0.0), f(1.0), f1, f2, f(0.5 * (lo + hi))});
}

/// Signed clearance between a capsule of radius `radius` around [a,b] and a shape.
inline double capsule_shape_clearance(const Vec3& a, const Vec3& b, double radius,
                                      const CollisionShape& shape) {
  switch (shape.kind) {
    case CollisionShape::Kind::Sphere:
      return point_segment_distance(shape.pose.translation, a, b) - radius - shape.dims.x();
    case CollisionShape::Kind::Box:
      return segment_box_distance(a, b, shape.pose.translation, shape.dims) - radius;
    case CollisionShape::Kind::Capsule: {
      const Vec3 axis = shape.pose.rotation * Vec3::UnitZ() * shape.dims.y();
      return segment_segment_distance(a, b, shape.pose.translation - axis,
                                      shape.pose.translation + axis) -
             radius - shape.dims.x();
    }
  }
  return 0.0;
}

struct ContactReport {
  std::size_t link = 0;
  std::size_t obstacle = 0;
  double clearance = 0.0;

  bool same_pair(const ContactReport& o) const { return link == o.link && obstacle == o.obstacle; }
};

/// Link i is the capsule from joint i's origin to joint i+1's origin (the
/// last link ends at the tool point). Reports every pair with clearance <= 0,
/// ordered by link then obstacle.
inline std::vector<ContactReport> check_collision(const KinematicChain& chain,
                                                  const JointVector& q,
                                                  const std::vector<CollisionShape>& obstacles) {
  std::vector<ContactReport> out;
  if (obstacles.empty()) return out;
  const ChainFrames frames = forward_kinematics_frames(chain, q);
  for (std::size_t i = 0; i < chain.dof(); ++i) {
    const Vec3 a = frames.links[i].translation;
    const Vec3 b = i + 1 < chain.dof() ? frames.links[i + 1].translation
                                       : frames.end_effector.translation;
    for (std::size_t k = 0; k < obstacles.size(); ++k) {
      const double c = capsule_shape_clearance(a, b, chain.joint(i).link_radius, obstacles[k]);
      if (c <= 0.0) out.push_back({i, k, c});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// World state

struct SimObject {
  int id = 0;
  std::string name;
  RigidTransform pose;          // object frame in the world
  RigidTransform tag_offset;    // object frame -> tag frame
  RigidTransform grasp_offset;  // object frame -> end-effector grasp frame
  bool graspable = true;

  FiducialTag tag() const { return {id, pose * tag_offset}; }
  RigidTransform grasp_frame() const { return pose * grasp_offset; }
};

enum class GripperMode { Open, Closing, Closed };

inline std::string_view to_string(GripperMode m) {
  switch (m) {
    case GripperMode::Open: return "open";
    case GripperMode::Closing: return "closing";
    case GripperMode::Closed: return "closed";
  }
  return "?";
}

enum class GripperCommand { Open, Close };

struct GripperState {
  GripperMode mode = GripperMode::Open;
  std::optional<int> attached;        // object id
  RigidTransform attach_offset;       // end effector -> object, while attached
  double closing_elapsed = 0.0;
};

struct GraspTolerance {
  double position = 0.01;     // m
  double orientation = 0.1;  // rad
};

/// Fixed properties of a simulated scene.
struct SimParams {
  KinematicChain chain;
  CameraModel camera;
  GraspTolerance grasp_tolerance;
  double gripper_close_time = 0.3;  // s; 0 resolves a close immediately
  double dt = 0.01;
};

/// The trajectory the follower is executing and how far into it it is.
struct ActiveTrajectory {
  JointTrajectory trajectory;
  double elapsed = 0.0;

  bool active() const { return !trajectory.empty(); }
  bool finished() const { return !active() || trajectory.finished(elapsed); }
};

struct WorldState {
  JointVector q;
  JointVector qd;
  GripperState gripper;
  std::vector<SimObject> objects;
  std::vector<CollisionShape> obstacles;
  std::uint64_t tick = 0;
  double time = 0.0;

  RigidTransform ee_pose(const KinematicChain& chain) const { return forward_kinematics(chain, q); }

  const SimObject* find_object(int id) const {
    for (const auto& o : objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }
  SimObject* find_object(int id) {
    for (auto& o : objects) {
      if (o.id == id) return &o;
    }
    return nullptr;
  }

  std::vector<FiducialTag> tags() const {
    std::vector<FiducialTag> out;
    for (const auto& o : objects) out.push_back(o.tag());
    return out;
  }
};

enum class GraspOutcome { Attached, Missed };

/// Attach the nearest graspable object whose grasp frame is within tolerance
/// of the end effector; otherwise the gripper closes on nothing.
inline GraspOutcome resolve_grasp(WorldState& world, const SimParams& params) {
  const RigidTransform ee = world.ee_pose(params.chain);
  world.gripper.mode = GripperMode::Closed;
  world.gripper.closing_elapsed = 0.0;
  SimObject* best = nullptr;
  double best_dist = 0.0;
  for (auto& o : world.objects) {
    if (!o.graspable) continue;
    const RigidTransform g = o.grasp_frame();
    const double dp = position_error(g, ee);
    if (dp > params.grasp_tolerance.position ||
        orientation_error(g, ee) > params.grasp_tolerance.orientation) {
      continue;
    }
    if (!best || dp < best_dist) {
      best = &o;
      best_dist = dp;
    }
  }
  if (!best) {
    world.gripper.attached.reset();
    return GraspOutcome::Missed;
  }
  world.gripper.attached = best->id;
  world.gripper.attach_offset = ee.inverse() * best->pose;
  return GraspOutcome::Attached;
}

/// Open releases any object where it is. Close either starts the closing
/// motion or, with a zero close time, resolves the grasp at once.
inline std::optional<GraspOutcome> actuate_gripper(WorldState& world, const SimParams& params,
                                                   GripperCommand command) {
  if (command == GripperCommand::Open) {
    world.gripper = GripperState{};
    return std::nullopt;
  }
  if (world.gripper.mode != GripperMode::Open) return std::nullopt;
  if (params.gripper_close_time <= 0.0) return resolve_grasp(world, params);
  world.gripper.mode = GripperMode::Closing;
  world.gripper.closing_elapsed = 0.0;
  return std::nullopt;
}

struct StepReport {
  std::vector<ContactReport> contacts;
  std::optional<TagDetection> detection;
  std::optional<GraspOutcome> grasp;
  RigidTransform ee_pose;
};

/// Advance one fixed tick: track the active trajectory kinematically, move the
/// gripper, carry the attached object, then run collision and detection checks
/// at the new configuration.
inline StepReport step_world(WorldState& world, const SimParams& params,
                             ActiveTrajectory& active, Rng& rng) {
  const double dt = params.dt;
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "step_world: dt must be > 0");
  StepReport report;

  if (active.active()) {
    active.elapsed += dt;
    const JointSample s = active.trajectory.sample(active.elapsed);
    world.q = s.q;
    world.qd = s.v;
  } else {
    world.qd.setZero();
  }

  ++world.tick;
  world.time = static_cast<double>(world.tick) * dt;

  if (world.gripper.mode == GripperMode::Closing) {
    world.gripper.closing_elapsed += dt;
    if (world.gripper.closing_elapsed >= params.gripper_close_time - 1e-12) {
      report.grasp = resolve_grasp(world, params);
    }
  }

  report.ee_pose = world.ee_pose(params.chain);
  if (world.gripper.attached) {
    if (SimObject* o = world.find_object(*world.gripper.attached)) {
      o->pose = report.ee_pose * world.gripper.attach_offset;
    }
  }

  report.contacts = check_collision(params.chain, world.q, world.obstacles);
  // A held object is not a target any more.
  auto tags = world.tags();
  if (world.gripper.attached) {
    std::erase_if(tags, [&](const FiducialTag& t) { return t.id == *world.gripper.attached; });
  }
  report.detection =
      simulate_detection(std::span<const FiducialTag>(tags), params.camera, report.ee_pose,
                         world.time, rng);
  return report;
}

}  // namespace teleop
