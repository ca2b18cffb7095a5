#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"

using namespace teleop;
using teleop::testing::arm6;
using teleop::testing::random_config;

namespace {

// Planar two-link arm in the x-y plane, unit links, z axes.
KinematicChain planar() {
  Joint j1;
  j1.name = "j1";
  Joint j2 = j1;
  j2.name = "j2";
  j2.offset = RigidTransform::from_translation(Vec3(1, 0, 0));
  return KinematicChain({j1, j2}, RigidTransform::from_translation(Vec3(1, 0, 0)));
}

JointVector vec(std::initializer_list<double> v) {
  JointVector q(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) q(i++) = x;
  return q;
}

}  // namespace

TEST(Kinematics, PlanarForwardKinematics) {
  const auto chain = planar();
  EXPECT_LE((forward_kinematics(chain, vec({0, 0})).translation - Vec3(2, 0, 0)).norm(), 1e-15);
  EXPECT_LE((forward_kinematics(chain, vec({M_PI / 2, -M_PI / 2})).translation - Vec3(1, 1, 0)).norm(),
            1e-15);
}

TEST(Kinematics, ZeroOffsetsGiveAccumulatedRotations) {
  Joint a, b;
  a.axis = Vec3::UnitZ();
  b.axis = Vec3::UnitX();
  const KinematicChain chain({a, b});
  const RigidTransform t = forward_kinematics(chain, vec({0.3, -1.1}));
  EXPECT_EQ(t.translation, Vec3::Zero());
  const Mat3 want = Eigen::AngleAxisd(0.3, Vec3::UnitZ()).toRotationMatrix() *
                    Eigen::AngleAxisd(-1.1, Vec3::UnitX()).toRotationMatrix();
  EXPECT_LE((t.rotation.matrix() - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Kinematics, ZeroConfigurationIsProductOfOffsets) {
  const auto& chain = arm6();
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (const auto& j : chain.joints()) m = m * j.offset.matrix();
  m = m * chain.tool().matrix();
  const RigidTransform fk = forward_kinematics(chain, JointVector::Zero(6));
  EXPECT_LE((fk.matrix() - m).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Kinematics, DimensionMismatchThrows) {
  try {
    forward_kinematics(arm6(), JointVector::Zero(5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Kinematics, InvalidChainsRejected) {
  Joint j;
  j.axis = Vec3::Zero();
  EXPECT_THROW(KinematicChain({j}), Error);
  j.axis = Vec3::UnitZ();
  j.q_min = 1.0;
  j.q_max = 0.0;
  EXPECT_THROW(KinematicChain({j}), Error);
  j.q_min = -1.0;
  j.v_max = 0.0;
  EXPECT_THROW(KinematicChain({j}), Error);
  EXPECT_THROW(KinematicChain(std::vector<Joint>{}), Error);
}

TEST(Kinematics, PlanarJacobianMatchesAnalytic) {
  const auto chain = planar();
  for (const auto& q : {vec({0, 0}), vec({0.4, -1.2}), vec({2.0, 0.7})}) {
    const Jacobian j = jacobian(chain, q);
    const double s1 = std::sin(q(0)), c1 = std::cos(q(0));
    const double s12 = std::sin(q(0) + q(1)), c12 = std::cos(q(0) + q(1));
    EXPECT_NEAR(j(0, 0), -(s1 + s12), 1e-15);
    EXPECT_NEAR(j(0, 1), -s12, 1e-15);
    EXPECT_NEAR(j(1, 0), c1 + c12, 1e-15);
    EXPECT_NEAR(j(1, 1), c12, 1e-15);
    EXPECT_EQ(j(5, 0), 1.0);
    EXPECT_EQ(j(5, 1), 1.0);
  }
}

TEST(Kinematics, SingleJointAngularRow) {
  Joint j;
  const KinematicChain chain({j});
  const Jacobian jac = jacobian(chain, vec({0.5}));
  EXPECT_EQ(Vec3(jac.block<3, 1>(3, 0)), Vec3(0, 0, 1));
}

TEST(Kinematics, JacobianMatchesFiniteDifferences) {
  const auto& chain = arm6();
  std::mt19937_64 rng(21);
  const double h = 1e-6;
  for (int k = 0; k < 100; ++k) {
    const JointVector q = random_config(chain, rng);
    const Jacobian jac = jacobian(chain, q);
    for (Eigen::Index i = 0; i < 6; ++i) {
      JointVector qp = q, qm = q;
      qp(i) += h;
      qm(i) -= h;
      const RigidTransform tp = forward_kinematics(chain, qp), tm = forward_kinematics(chain, qm);
      const Vec3 dp = (tp.translation - tm.translation) / (2 * h);
      const Vec3 dw = Rotation::from_matrix(tp.rotation.matrix() * tm.rotation.matrix().transpose()).log() /
                      (2 * h);
      EXPECT_LE((jac.block<3, 1>(0, i) - dp).norm(), 1e-6);
      EXPECT_LE((jac.block<3, 1>(3, i) - dw).norm(), 1e-6);
    }
  }
}

TEST(Kinematics, IkFixedPoint) {
  const auto& chain = arm6();
  std::mt19937_64 rng(22);
  const JointVector q = random_config(chain, rng);
  const IkResult r = solve_ik(chain, forward_kinematics(chain, q), q);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.q, q);
}

TEST(Kinematics, IkPlanarAnalyticSolution) {
  const auto chain = planar();
  const RigidTransform target{Rotation::identity(), Vec3(1, 1, 0)};
  const IkResult r = solve_ik(chain, target, vec({0, 0}));
  const RigidTransform got = forward_kinematics(chain, r.q);
  EXPECT_LT(position_error(target, got), 1e-4);
  EXPECT_LT(orientation_error(target, got), 1e-4);
  EXPECT_NEAR(r.q(0), M_PI / 2, 1e-3);
  EXPECT_NEAR(r.q(1), -M_PI / 2, 1e-3);
}

TEST(Kinematics, IkUnreachableIsNotConverged) {
  const auto chain = planar();
  try {
    solve_ik(chain, RigidTransform::from_translation(Vec3(2.5, 0.5, 0)), vec({0.1, 0.1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotConverged);
  }
}

TEST(Kinematics, IkSeedOutsideLimitsRejected) {
  const auto& chain = arm6();
  JointVector seed = JointVector::Zero(6);
  seed(1) = 5.0;
  EXPECT_THROW(solve_ik(chain, forward_kinematics(chain, JointVector::Zero(6)), seed), Error);
}

TEST(Kinematics, IkRoundTripFromNearbySeeds) {
  const auto& chain = arm6();
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  int solved = 0;
  for (int k = 0; k < 100; ++k) {
    const JointVector q_star = random_config(chain, rng, 0.2);
    JointVector seed = q_star;
    for (Eigen::Index i = 0; i < 6; ++i) seed(i) += jitter(rng);
    seed = chain.clamp(seed);
    const RigidTransform target = forward_kinematics(chain, q_star);
    const IkResult r = solve_ik(chain, target, seed);
    const RigidTransform got = forward_kinematics(chain, r.q);
    EXPECT_LE(position_error(target, got), 1e-4);
    EXPECT_LE(orientation_error(target, got), 1e-4);
    EXPECT_TRUE(chain.within_limits(r.q));
    ++solved;
  }
  EXPECT_EQ(solved, 100);
}
