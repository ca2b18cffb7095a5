#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace teleop;
using teleop::testing::random_pose;
using teleop::testing::random_unit;

namespace {

CameraModel test_camera() {
  CameraModel c;
  c.extrinsics = {Rotation::rot_x(0.3) * Rotation::rot_z(-0.2), Vec3(0.02, 0.06, -0.04)};
  c.range = 1.5;
  c.half_fov = 0.7;
  return c;
}

}  // namespace

TEST(Perception, PoseChainRecoversTruthOnGrid) {
  const CameraModel cam = test_camera();
  const RigidTransform tag_offset{Rotation::rot_y(0.4), Vec3(0.01, -0.02, 0.05)};
  const RigidTransform grasp_offset{Rotation::rot_x(M_PI), Vec3(0.0, 0.0, 0.08)};
  std::mt19937_64 rng(51);
  double worst_p = 0.0, worst_r = 0.0;
  int seen = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 5; ++k) {
        const RigidTransform ee = random_pose(rng, 0.8);
        // Tag placed on a grid inside the view cone of the camera.
        const Vec3 local(-0.2 + 0.1 * i, -0.2 + 0.1 * j, 0.4 + 0.2 * k);
        const RigidTransform tag_pose = ee * cam.extrinsics *
                                        RigidTransform{Rotation::about_axis(random_unit(rng), 1.0), local};
        const RigidTransform object = tag_pose * tag_offset.inverse();
        const auto det = simulate_detection(FiducialTag{3, tag_pose}, cam, ee, 0.0, rng);
        ASSERT_TRUE(det.has_value());
        EXPECT_EQ(det->tag_id, 3);
        ++seen;
        const RigidTransform obj_est = object_pose_from_detection(ee, cam, *det) * tag_offset.inverse();
        const RigidTransform grasp = grasp_pose_from_object(obj_est, grasp_offset);
        const RigidTransform truth = object * grasp_offset;
        worst_p = std::max({worst_p, position_error(object, obj_est), position_error(truth, grasp)});
        worst_r = std::max({worst_r, orientation_error(object, obj_est), orientation_error(truth, grasp)});
      }
    }
  }
  EXPECT_EQ(seen, 125);
  EXPECT_LE(worst_p, 1e-9);
  EXPECT_LE(worst_r, 1e-9);
}

TEST(Perception, NoDetectionOutsideRangeOrView) {
  CameraModel cam = test_camera();
  cam.sigma_position = 0.01;
  cam.sigma_orientation = 0.05;
  std::mt19937_64 rng(52);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  int inside = 0, outside = 0;
  for (int k = 0; k < 20000; ++k) {
    const RigidTransform ee = random_pose(rng, 0.5);
    const Vec3 local(u(rng), u(rng), u(rng));
    const RigidTransform tag_pose = ee * cam.extrinsics * RigidTransform::from_translation(local);
    const auto det = simulate_detection(FiducialTag{1, tag_pose}, cam, ee, 0.0, rng);
    // Independent gate: angle from the optical axis via the dot product.
    const bool visible = local.z() > 0.0 && local.norm() <= cam.range &&
                         std::acos(local.z() / local.norm()) <= cam.half_fov;
    if (det) {
      EXPECT_TRUE(visible) << local.transpose();
      ++inside;
    } else {
      ++outside;
      EXPECT_FALSE(visible && std::acos(local.z() / local.norm()) < cam.half_fov - 1e-9 &&
                   local.norm() < cam.range - 1e-9)
          << local.transpose();
    }
  }
  EXPECT_GT(inside, 100);
  EXPECT_GT(outside, 100);
}

TEST(Perception, BoundaryOfTheViewCone) {
  const CameraModel cam = test_camera();
  EXPECT_TRUE(in_view(cam, Vec3(0, 0, cam.range)));
  EXPECT_FALSE(in_view(cam, Vec3(0, 0, std::nextafter(cam.range, 2.0))));
  EXPECT_FALSE(in_view(cam, Vec3(0, 0, 0)));
  EXPECT_FALSE(in_view(cam, Vec3(0, 0, -0.5)));
  const double inside = cam.half_fov - 1e-6, outside = cam.half_fov + 1e-6;
  EXPECT_TRUE(in_view(cam, Vec3(std::sin(inside), 0, std::cos(inside))));
  EXPECT_FALSE(in_view(cam, Vec3(0, std::sin(outside), std::cos(outside))));
}

TEST(Perception, OrientationNoiseFollowsFoldedGaussian) {
  CameraModel cam = test_camera();
  cam.sigma_orientation = 0.02;
  const int n = 1000;
  std::mt19937_64 rng(53);
  const RigidTransform ee = random_pose(rng, 0.3);
  const RigidTransform tag_pose = ee * cam.extrinsics * RigidTransform::from_translation(Vec3(0, 0, 0.4));
  const RigidTransform truth = (ee * cam.extrinsics).inverse() * tag_pose;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto det = simulate_detection(FiducialTag{1, tag_pose}, cam, ee, 0.0, rng);
    ASSERT_TRUE(det);
    EXPECT_LE(position_error(truth, det->pose), 1e-12);
    sum += orientation_error(truth, det->pose);
  }
  const double sigma = cam.sigma_orientation;
  const double mean = sum / n;
  EXPECT_NEAR(mean, sigma * std::sqrt(2.0 / M_PI), 3.0 * sigma / std::sqrt(double(n)));
}

TEST(Perception, PositionNoiseHasExpectedSpread) {
  CameraModel cam = test_camera();
  cam.sigma_position = 0.005;
  const int n = 4000;
  std::mt19937_64 rng(54);
  const RigidTransform ee;
  const RigidTransform tag_pose = cam.extrinsics * RigidTransform::from_translation(Vec3(0.05, 0, 0.5));
  const RigidTransform truth = cam.extrinsics.inverse() * tag_pose;
  Vec3 sum = Vec3::Zero();
  double sq = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto det = simulate_detection(FiducialTag{1, tag_pose}, cam, ee, 0.0, rng);
    ASSERT_TRUE(det);
    const Vec3 d = det->pose.translation - truth.translation;
    sum += d;
    sq += d.squaredNorm();
    EXPECT_LE(orientation_error(truth, det->pose), 1e-12);
  }
  // Per-axis mean within 4 standard errors; total variance 3 sigma^2 within 10%.
  EXPECT_LE((sum / n).cwiseAbs().maxCoeff(), 4.0 * cam.sigma_position / std::sqrt(double(n)));
  EXPECT_NEAR(sq / n, 3.0 * cam.sigma_position * cam.sigma_position,
              0.1 * 3.0 * cam.sigma_position * cam.sigma_position);
}

TEST(Perception, FirstVisibleTagWins) {
  const CameraModel cam = test_camera();
  std::mt19937_64 rng(55);
  const RigidTransform ee;
  const RigidTransform ahead = cam.extrinsics * RigidTransform::from_translation(Vec3(0, 0, 0.5));
  const RigidTransform behind = cam.extrinsics * RigidTransform::from_translation(Vec3(0, 0, -0.5));
  const std::vector<FiducialTag> tags{{1, behind}, {2, ahead}, {3, ahead}};
  const auto det = simulate_detection(tags, cam, ee, 1.5, rng);
  ASSERT_TRUE(det);
  EXPECT_EQ(det->tag_id, 2);
  EXPECT_EQ(det->timestamp, 1.5);
  EXPECT_FALSE(simulate_detection(std::span(tags).first(1), cam, ee, 0.0, rng));
}

TEST(Perception, FuseSinglePoseIsIdentityAndAverages) {
  std::mt19937_64 rng(56);
  const RigidTransform p = random_pose(rng);
  EXPECT_EQ(fuse_poses(std::vector<RigidTransform>{p}), p);
  EXPECT_THROW(fuse_poses(std::vector<RigidTransform>{}), Error);
  const RigidTransform a{Rotation::rot_z(0.1), Vec3(1, 0, 0)};
  const RigidTransform b{Rotation::rot_z(-0.1), Vec3(0, 1, 0)};
  const RigidTransform m = fuse_poses(std::vector<RigidTransform>{a, b});
  EXPECT_LE((m.translation - Vec3(0.5, 0.5, 0)).norm(), 1e-15);
  EXPECT_LE(orientation_error(Rotation::identity(), m.rotation), 1e-12);
}

TEST(Perception, TrackerReliability) {
  DetectionPolicy policy;
  policy.consecutive = 3;
  policy.estimate_window = 4;
  DetectionTracker tr(policy);
  EXPECT_FALSE(tr.reliable());
  EXPECT_FALSE(tr.has_estimate());
  const RigidTransform p = RigidTransform::from_translation(Vec3(0.5, 0, 0));
  tr.update(p);
  tr.update(p);
  EXPECT_FALSE(tr.reliable());
  tr.update(p);
  EXPECT_TRUE(tr.reliable());
  tr.update(std::nullopt);
  EXPECT_FALSE(tr.reliable());
  EXPECT_TRUE(tr.has_estimate());
  // An inconsistent jump restarts the streak.
  tr.update(p);
  tr.update(RigidTransform::from_translation(Vec3(0.6, 0, 0)));
  tr.update(RigidTransform::from_translation(Vec3(0.6, 0, 0)));
  EXPECT_FALSE(tr.reliable());
  EXPECT_EQ(tr.samples(), 4u);
  tr.reset();
  EXPECT_FALSE(tr.has_estimate());
  EXPECT_THROW(DetectionTracker(DetectionPolicy{0, 0.005, 0.02, 10}), Error);
}

TEST(Perception, WindowedEstimateShrinksNoise) {
  CameraModel cam = test_camera();
  cam.sigma_position = 0.005;
  cam.sigma_orientation = 0.02;
  std::mt19937_64 rng(57);
  const RigidTransform ee;
  const RigidTransform tag_pose = cam.extrinsics * RigidTransform::from_translation(Vec3(0, 0, 0.4));
  double single = 0.0, fused = 0.0;
  const int trials = 300;
  for (int k = 0; k < trials; ++k) {
    DetectionTracker tr(DetectionPolicy{1, 1.0, 1.0, 10});
    for (int i = 0; i < 10; ++i) {
      const auto det = simulate_detection(FiducialTag{1, tag_pose}, cam, ee, 0.0, rng);
      const RigidTransform est = object_pose_from_detection(ee, cam, *det);
      if (i == 0) single += position_error(tag_pose, est);
      tr.update(est);
    }
    fused += position_error(tag_pose, tr.estimate());
  }
  // Averaging 10 independent samples shrinks the error by sqrt(10) in expectation.
  EXPECT_NEAR(fused / single, 1.0 / std::sqrt(10.0), 0.1);
}
