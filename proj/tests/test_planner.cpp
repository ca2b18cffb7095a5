#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"

using namespace teleop;
using teleop::testing::arm6;
using teleop::testing::random_config;

namespace {

// Closed-form rest-to-rest duration for one joint.
double trapezoid_duration(double dist, double v, double a) {
  if (dist >= v * v / a) return dist / v + v / a;
  return 2.0 * std::sqrt(dist / a);
}

KinematicChain single_joint(double v_max, double a_max) {
  Joint j;
  j.q_min = -100.0;
  j.q_max = 100.0;
  j.v_max = v_max;
  j.a_max = a_max;
  return KinematicChain({j});
}

// Largest |finite-difference velocity| / v_max over a fine sampling.
double worst_speed_ratio_excess(const JointTrajectory& traj, const JointVector& v_max, int samples) {
  double worst = -1e9;
  const double T = traj.duration();
  if (T <= 0.0) return 0.0;
  JointVector prev = traj.sample(0.0).q;
  for (int k = 1; k <= samples; ++k) {
    const double t0 = T * (k - 1) / samples, t1 = T * k / samples;
    const JointSample s = traj.sample(t1);
    const JointVector fd = (s.q - prev) / (t1 - t0);
    worst = std::max(worst, (fd.cwiseAbs() - v_max).maxCoeff());
    worst = std::max(worst, (s.v.cwiseAbs() - v_max).maxCoeff());
    prev = s.q;
  }
  return worst;
}

}  // namespace

TEST(Planner, HoldWhenAlreadyThere) {
  std::mt19937_64 rng(41);
  const JointVector q = random_config(arm6(), rng);
  const JointTrajectory t = plan_joint_trajectory(arm6(), q, q);
  EXPECT_EQ(t.duration(), 0.0);
  EXPECT_EQ(t.sample(1.0).q, q);
}

TEST(Planner, RandomPlansRespectVelocityLimits) {
  const auto& chain = arm6();
  const JointVector v_max = chain.velocity_limits();
  std::mt19937_64 rng(42);
  for (int k = 0; k < 1000; ++k) {
    const JointVector a = random_config(chain, rng), b = random_config(chain, rng);
    const JointTrajectory traj = plan_joint_trajectory(chain, a, b);
    EXPECT_LE(worst_speed_ratio_excess(traj, v_max, 200), 1e-9);
    EXPECT_EQ(traj.start(), a);
    EXPECT_EQ(traj.goal(), b);
    EXPECT_EQ(traj.sample(traj.duration()).q, b);
    for (const auto& knot : traj.waypoints()) {
      EXPECT_TRUE(chain.within_limits(knot.q, 1e-12));
      EXPECT_LE((knot.v.cwiseAbs() - v_max).maxCoeff(), 1e-9);
    }
  }
}

TEST(Planner, PolylinesRespectVelocityLimits) {
  const auto& chain = arm6();
  const JointVector v_max = chain.velocity_limits();
  std::mt19937_64 rng(43);
  std::uniform_int_distribution<int> count(2, 6);
  for (int k = 0; k < 200; ++k) {
    std::vector<JointVector> pts;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) pts.push_back(random_config(chain, rng));
    const JointTrajectory traj = time_polyline(pts, v_max, chain.acceleration_limits());
    EXPECT_LE(worst_speed_ratio_excess(traj, v_max, 400), 1e-9);
    EXPECT_EQ(traj.goal(), pts.back());
    double t_prev = -1.0;
    for (const auto& knot : traj.waypoints()) {
      EXPECT_GT(knot.t, t_prev);
      t_prev = knot.t;
    }
  }
}

TEST(Planner, SingleJointDurationMatchesClosedForm) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> dist(1e-4, 8.0), vel(0.1, 3.0), acc(0.2, 6.0);
  for (int k = 0; k < 1000; ++k) {
    const double v = vel(rng), a = acc(rng);
    const double d = k % 3 == 0 ? 0.5 * v * v / a : dist(rng);  // triangle and trapezoid
    const auto chain = single_joint(v, a);
    const double start = -d / 2;
    JointVector q0(1), q1(1);
    q0 << start;
    q1 << start + (k % 2 ? d : -d);
    if (k % 2 == 0) std::swap(q0, q1);
    const JointTrajectory traj = plan_joint_trajectory(chain, q0, q1);
    EXPECT_NEAR(traj.duration(), trapezoid_duration(d, v, a), 1e-9) << d << " " << v << " " << a;
  }
}

TEST(Planner, GoalOutsideLimitsRejected) {
  const auto& chain = arm6();
  JointVector bad = JointVector::Zero(6);
  bad(0) = 4.0;
  try {
    plan_joint_trajectory(chain, JointVector::Zero(6), bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GoalOutOfLimits);
  }
}

TEST(Planner, RetargetClampsToLimits) {
  const auto& chain = arm6();
  const JointVector q0 = JointVector::Zero(6);
  JointVector want = q0;
  want(2) = 5.0;
  const JointTrajectory t = rate_limited_retarget(chain, JointTrajectory::hold(q0), 0.0, want);
  EXPECT_EQ(t.goal()(2), chain.joint(2).q_max);
}

TEST(Planner, RetargetSweepStaysWithinVelocityLimits) {
  // A leader sweeping faster than the follower can follow, streamed at 100 Hz.
  const auto& chain = arm6();
  const JointVector v_max = chain.velocity_limits();
  const double dt = 0.01;
  std::mt19937_64 rng(45);
  JointVector q = JointVector::Zero(6);
  JointTrajectory active = JointTrajectory::hold(q);
  double elapsed = 0.0;
  double worst = -1.0;
  for (int k = 0; k < 3000; ++k) {
    const double t = k * dt;
    JointVector target(6);
    for (Eigen::Index i = 0; i < 6; ++i) target(i) = 2.5 * std::sin(3.0 * t + i) + (k % 97 == 0 ? 1.0 : 0.0);
    active = rate_limited_retarget(chain, active, elapsed, target);
    elapsed = dt;
    const JointVector next = active.sample(elapsed).q;
    worst = std::max(worst, ((next - q).cwiseAbs() / dt - v_max).maxCoeff());
    EXPECT_TRUE(chain.within_limits(next, 1e-9));
    q = next;
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Planner, RetargetKeepsVelocityContinuous) {
  const auto& chain = arm6();
  JointVector goal = JointVector::Constant(6, 1.0);
  JointTrajectory t = rate_limited_retarget(chain, JointTrajectory::hold(JointVector::Zero(6)), 0.0, goal);
  const JointSample mid = t.sample(0.3);
  const JointTrajectory back = rate_limited_retarget(chain, t, 0.3, JointVector::Zero(6));
  EXPECT_EQ(back.sample(0.0).v, mid.v);
  EXPECT_EQ(back.sample(0.0).q, mid.q);
}

TEST(Planner, CartesianApproachMonotoneAndAccurate) {
  const auto& chain = arm6();
  std::mt19937_64 rng(46);
  for (int k = 0; k < 20; ++k) {
    const JointVector q0 = random_config(chain, rng, 0.4);
    JointVector q1 = q0;
    std::uniform_real_distribution<double> d(-0.25, 0.25);
    for (Eigen::Index i = 0; i < 6; ++i) q1(i) += d(rng);
    const RigidTransform target = forward_kinematics(chain, chain.clamp(q1));
    std::vector<JointVector> path;
    try {
      path = cartesian_waypoints(chain, q0, target);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::IkFailure);
      continue;
    }
    EXPECT_EQ(path.front(), q0);
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& q : path) {
      const double dist = position_error(forward_kinematics(chain, q), target);
      EXPECT_LE(dist, prev + 1e-4);  // non-increasing up to the IK tolerance
      prev = dist;
    }
    const RigidTransform end = forward_kinematics(chain, path.back());
    EXPECT_LE(position_error(target, end), 1e-4);
    EXPECT_LE(orientation_error(target, end), 1e-4);
    const JointTrajectory traj = plan_cartesian_approach(chain, q0, target);
    EXPECT_LE(worst_speed_ratio_excess(traj, chain.velocity_limits(), 400), 1e-9);
  }
}

TEST(Planner, CartesianUnreachableIsIkFailure) {
  const auto& chain = arm6();
  const JointVector q0 = teleop::testing::pickup().home;
  try {
    plan_cartesian_approach(chain, q0, RigidTransform::from_translation(Vec3(3.0, 0, 0.5)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IkFailure);
  }
}
