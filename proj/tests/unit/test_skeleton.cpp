#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "egopose/errors.hpp"
#include "egopose/skeleton.hpp"
#include "oracles.hpp"

using namespace egopose;
using egopose::oracle::fk_homogeneous;
using egopose::oracle::random_beta;
using egopose::oracle::random_pose;
using egopose::oracle::random_rotation;

namespace {

const SkeletonModel& model() { return SkeletonModel::default_model(); }

void expect_vec_near(const Vec3& a, const Vec3& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(a.z, b.z, tol);
}

ShapeParams basis(int i, double scale = 1.0) {
  ShapeParams b{};
  b[i] = scale;
  return b;
}

Vec3 blend_column(const SkeletonModel& m, int joint, int k) {
  const BlendBlock& b = m.blend(joint);
  return {b[0][k], b[1][k], b[2][k]};
}

}  // namespace

TEST(BoneOffsets, ZeroShapeGivesMeanOffsets) {
  const auto offsets = bone_offsets(model(), ShapeParams{});
  for (int j = 0; j < kNumJoints; ++j) EXPECT_EQ(offsets[j], model().mean_offset(j));
}

TEST(BoneOffsets, FirstBasisAddsFirstColumn) {
  const auto offsets = bone_offsets(model(), basis(0));
  for (int j = 0; j < kNumJoints; ++j) {
    expect_vec_near(offsets[j], model().mean_offset(j) + blend_column(model(), j, 0), 1e-15);
  }
}

TEST(BoneOffsets, AffineInBeta) {
  const auto o0 = bone_offsets(model(), ShapeParams{});
  const auto o1 = bone_offsets(model(), basis(0));
  const auto o2 = bone_offsets(model(), basis(0, 2.0));
  for (int j = 0; j < kNumJoints; ++j) {
    // second difference of an affine map vanishes
    expect_vec_near(o2[j] - o1[j] * 2.0 + o0[j], Vec3{}, 1e-15);
    expect_vec_near(o2[j], model().mean_offset(j) + 2.0 * blend_column(model(), j, 0), 1e-15);
  }
}

TEST(BoneOffsets, OnlyThreeActiveColumns) {
  for (int j = 0; j < kNumJoints; ++j) {
    for (int k = 3; k < kNumBetas; ++k) EXPECT_EQ(blend_column(model(), j, k), Vec3{});
  }
}

TEST(ForwardKinematics, TPoseIsPrefixSumOfOffsets) {
  BodyPose pose;
  const FkResult fk = forward_kinematics(model(), pose, ShapeParams{});
  EXPECT_EQ(fk.joint_position[0], Vec3{});
  for (int j = 1; j < kNumJoints; ++j) {
    Vec3 expected;
    for (int k = j; k != 0; k = model().parent(k)) expected += model().mean_offset(k);
    expect_vec_near(fk.joint_position[j], expected, 1e-12);
    EXPECT_EQ(fk.joint_orientation[j], Mat3::identity());
  }
}

TEST(ForwardKinematics, TranslationEquivariance) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    BodyPose pose = random_pose(rng);
    const ShapeParams beta = random_beta(rng, 1.0);
    const FkResult a = forward_kinematics(model(), pose, beta);
    const Vec3 t{1, 2, 0};
    pose.root_position += t;
    const FkResult b = forward_kinematics(model(), pose, beta);
    for (int j = 0; j < kNumJoints; ++j) {
      expect_vec_near(b.joint_position[j], a.joint_position[j] + t, 1e-12);
      EXPECT_EQ(b.joint_orientation[j], a.joint_orientation[j]);
    }
  }
}

TEST(ForwardKinematics, RotationEquivarianceAboutRoot) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    BodyPose pose = random_pose(rng);
    const ShapeParams beta = random_beta(rng, 1.0);
    const FkResult a = forward_kinematics(model(), pose, beta);
    const RotationMatrix r = random_rotation(rng);
    pose.root_orientation = r * pose.root_orientation;
    const FkResult b = forward_kinematics(model(), pose, beta);
    for (int j = 0; j < kNumJoints; ++j) {
      const Vec3 rotated = pose.root_position + r * (a.joint_position[j] - pose.root_position);
      expect_vec_near(b.joint_position[j], rotated, 1e-9);
    }
  }
}

TEST(ForwardKinematics, ThreeLinkChainMatchesHomogeneousOracle) {
  // spine chain 0 -> 3 -> 6 -> 9 bent 90 degrees at every link
  BodyPose pose;
  pose.root_position = {0.3, -0.2, 0.9};
  pose.root_orientation = rotation_z(deg_to_rad(90));
  pose.local_rotations[3 - 1] = rotation_x(deg_to_rad(90));
  pose.local_rotations[6 - 1] = rotation_y(deg_to_rad(90));
  pose.local_rotations[9 - 1] = rotation_z(deg_to_rad(-90));
  const FkResult fk = forward_kinematics(model(), pose, ShapeParams{});
  const JointPositions oracle = fk_homogeneous(model(), pose, ShapeParams{});
  for (int j : {0, 3, 6, 9, 12, 15}) expect_vec_near(fk.joint_position[j], oracle[j], 1e-12);
}

TEST(ForwardKinematics, RandomPosesMatchHomogeneousOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const BodyPose pose = random_pose(rng);
    const ShapeParams beta = random_beta(rng, 2.0);
    const FkResult fk = forward_kinematics(model(), pose, beta);
    const JointPositions oracle = fk_homogeneous(model(), pose, beta);
    for (int j = 0; j < kNumJoints; ++j) expect_vec_near(fk.joint_position[j], oracle[j], 1e-12);
  }
}

TEST(ForwardKinematics, BoneLengthsMatchOffsets) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const BodyPose pose = random_pose(rng);
    const ShapeParams beta = random_beta(rng, 2.0);
    const FkResult fk = forward_kinematics(model(), pose, beta);
    const auto offsets = bone_offsets(model(), beta);
    for (int j = 1; j < kNumJoints; ++j) {
      const double d = norm(fk.joint_position[j] - fk.joint_position[model().parent(j)]);
      EXPECT_NEAR(d, norm(offsets[j]), 1e-9);
    }
  }
}

TEST(RootFromHead, TPoseHeadGivesOrigin) {
  BodyPose pose;
  const FkResult fk = forward_kinematics(model(), pose, ShapeParams{});
  const Vec3 root = root_from_head(model(), fk.joint_position[model().head_joint()], pose.root_orientation,
                                   pose.local_rotations, ShapeParams{});
  expect_vec_near(root, Vec3{}, 1e-15);
}

TEST(RootFromHead, ShiftedHeadShiftsRoot) {
  BodyPose pose;
  const FkResult fk = forward_kinematics(model(), pose, ShapeParams{});
  const Vec3 head = fk.joint_position[model().head_joint()] + Vec3{1, 0, 0};
  const Vec3 root = root_from_head(model(), head, pose.root_orientation, pose.local_rotations, ShapeParams{});
  expect_vec_near(root, Vec3{1, 0, 0}, 1e-15);
}

TEST(RootFromHead, Closure) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    BodyPose pose = random_pose(rng);
    const ShapeParams beta = random_beta(rng, 2.0);
    const Vec3 head{std::uniform_real_distribution<double>(-60, 60)(rng), 0.5, 1.7};
    pose.root_position = root_from_head(model(), head, pose.root_orientation, pose.local_rotations, beta);
    const FkResult fk = forward_kinematics(model(), pose, beta);
    EXPECT_LT(norm(fk.joint_position[model().head_joint()] - head), 1e-9);
  }
}

TEST(Measurements, DefaultModelGolden) {
  const BodyMeasurements m = t_pose_measurements(model(), ShapeParams{});
  EXPECT_NEAR(m.height, 1.70, 1e-12);
  EXPECT_NEAR(m.arm_length, 0.51, 1e-12);
}

TEST(Measurements, ArmLengthIsChainSum) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const ShapeParams beta = random_beta(rng, 1.5);
    const auto offsets = bone_offsets(model(), beta);
    double chain = 0.0;
    for (int j : model().arm_chain()) chain += norm(offsets[j]);
    EXPECT_NEAR(t_pose_measurements(model(), beta).arm_length, chain, 1e-12);
  }
}

TEST(Measurements, UniformScaleScalesHeight) {
  // beta[0] adds 5% of every mean offset per unit, so beta[0] = 2 scales by 1.1
  const double h0 = t_pose_measurements(model(), ShapeParams{}).height;
  const double h1 = t_pose_measurements(model(), basis(0, 2.0)).height;
  EXPECT_NEAR(h1, 1.1 * h0, 1e-9);
  const auto offsets = bone_offsets(model(), basis(0, 2.0));
  for (int j = 0; j < kNumJoints; ++j) expect_vec_near(offsets[j], 1.1 * model().mean_offset(j), 1e-12);
}

TEST(Measurements, ScaledModelScalesEverything) {
  const SkeletonModel big = model().scaled(1.2);
  const BodyMeasurements a = t_pose_measurements(model(), ShapeParams{});
  const BodyMeasurements b = t_pose_measurements(big, ShapeParams{});
  EXPECT_NEAR(b.height, 1.2 * a.height, 1e-12);
  EXPECT_NEAR(b.arm_length, 1.2 * a.arm_length, 1e-12);
}

TEST(Proxies, CountAndCoverage) {
  EXPECT_EQ(model().proxy_count(), 55);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_GE(model().proxies(j).size(), 2u) << model().joint_name(j);
}

TEST(Proxies, RestPoseMatchesHomogeneousOracle) {
  const ShapeParams beta{};
  const BodyPose pose = rest_pose(model(), beta);
  const FkResult fk = forward_kinematics(model(), pose, beta);
  const std::vector<Vec3> verts = proxy_vertices(model(), fk, beta);
  const JointPositions joints = fk_homogeneous(model(), pose, beta);
  std::size_t i = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    for (const Vec3& local : model().proxies(j)) {
      // identity orientations: world = joint + local offset
      expect_vec_near(verts[i++], joints[j] + local, 1e-12);
    }
  }
  EXPECT_EQ(i, verts.size());
}

TEST(Proxies, GoldenRestPoseExtremes) {
  const BodyPose pose = rest_pose(model(), ShapeParams{});
  const FkResult fk = forward_kinematics(model(), pose, ShapeParams{});
  const std::vector<Vec3> verts = proxy_vertices(model(), fk, ShapeParams{});
  double lo = 1e9, hi = -1e9;
  for (const Vec3& v : verts) {
    lo = std::min(lo, v.z);
    hi = std::max(hi, v.z);
  }
  EXPECT_NEAR(lo, 0.0, 1e-12);
  EXPECT_NEAR(hi, 1.70, 1e-12);
  expect_vec_near(pose.root_position, Vec3{0, 0, 0.96}, 1e-15);
  // golden points, summed by hand along the tree
  const Vec3 left_sole = fk.joint_position[10] + model().proxies(10).front();
  const Vec3 right_sole = fk.joint_position[11] + model().proxies(11).front();
  const Vec3 head_top = fk.joint_position[15] + model().proxies(15).front();
  expect_vec_near(left_sole, Vec3{0.11, 0.11, 0.0}, 1e-12);
  expect_vec_near(right_sole, Vec3{0.11, -0.11, 0.0}, 1e-12);
  expect_vec_near(head_top, Vec3{0.01, 0.0, 1.70}, 1e-12);
  expect_vec_near(fk.joint_position[20], Vec3{0.0, 0.69, 1.41}, 1e-12);
}

TEST(Proxies, TranslateWithRoot) {
  std::mt19937_64 rng(9);
  BodyPose pose = random_pose(rng);
  const ShapeParams beta = random_beta(rng, 1.0);
  const auto a = proxy_vertices(model(), forward_kinematics(model(), pose, beta), beta);
  const Vec3 t{-3, 5, 0.25};
  pose.root_position += t;
  const auto b = proxy_vertices(model(), forward_kinematics(model(), pose, beta), beta);
  for (std::size_t i = 0; i < a.size(); ++i) expect_vec_near(b[i], a[i] + t, 1e-12);
}

TEST(Proxies, ScaleWithBoneLength) {
  const ShapeParams beta = basis(0, 2.0);
  const BodyPose pose = rest_pose(model(), beta);
  const FkResult fk = forward_kinematics(model(), pose, beta);
  const auto verts = proxy_vertices(model(), fk, beta);
  std::size_t i = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    for (const Vec3& local : model().proxies(j)) expect_vec_near(verts[i++], fk.joint_position[j] + 1.1 * local, 1e-12);
  }
}

TEST(SkeletonJson, RoundTrip) {
  const SkeletonModel copy = SkeletonModel::from_json_text(model().to_json_text());
  for (int j = 0; j < kNumJoints; ++j) {
    EXPECT_EQ(copy.parent(j), model().parent(j));
    EXPECT_EQ(copy.mean_offset(j), model().mean_offset(j));
    EXPECT_EQ(copy.proxies(j), model().proxies(j));
  }
}

TEST(SkeletonJson, RejectsUnknownVersion) {
  std::string text = model().to_json_text();
  const auto pos = text.find("\"version\"");
  ASSERT_NE(pos, std::string::npos);
  const auto colon = text.find(':', pos);
  const auto end = text.find_first_of(",}", colon);
  text.replace(colon + 1, end - colon - 1, "99");
  try {
    SkeletonModel::from_json_text(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
  }
}

TEST(SkeletonJson, RejectsCycle) {
  std::string text = model().to_json_text();
  const auto pos = text.find("\"parents\"");
  const auto open = text.find('[', pos);
  // root pointing at joint 3 breaks the tree
  text.replace(open + 1, 2, "3,");
  EXPECT_THROW(SkeletonModel::from_json_text(text), Error);
}

// -- gradients -----------------------------------------------------------------

namespace {

struct FkProbe {
  BodyPose base;
  std::array<Rot6D, kNumLocalJoints> local6d{};
  ShapeParams beta{};
  std::array<Vec3, kNumJoints> weights{};

  double value(const std::array<Rot6D, kNumLocalJoints>& r6, const ShapeParams& b) const {
    BodyPose pose = base;
    for (int k = 0; k < kNumLocalJoints; ++k) pose.local_rotations[k] = rot6d_to_matrix(r6[k]);
    const FkResult fk = forward_kinematics(SkeletonModel::default_model(), pose, b);
    double s = 0.0;
    for (int j = 0; j < kNumJoints; ++j) s += dot(weights[j], fk.joint_position[j]);
    return s;
  }
};

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-6, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(ForwardKinematics, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    FkProbe p;
    p.base = random_pose(rng);
    for (auto& r : p.local6d) {
      for (double& x : r.v) x = n(rng);
    }
    p.beta = random_beta(rng, 1.0);
    for (auto& w : p.weights) w = {n(rng), n(rng), n(rng)};

    BodyPose pose = p.base;
    for (int k = 0; k < kNumLocalJoints; ++k) pose.local_rotations[k] = rot6d_to_matrix(p.local6d[k]);
    const FkResult fk = forward_kinematics(model(), pose, p.beta);
    const FkGradient g = forward_kinematics_backward(model(), pose, p.beta, fk, p.weights);

    const double h = 1e-5;
    for (int k = 0; k < kNumLocalJoints; ++k) {
      const Rot6D analytic = rot6d_to_matrix_backward(p.local6d[k], g.local_rotations[k]);
      for (int c = 0; c < 6; ++c) {
        auto plus = p.local6d, minus = p.local6d;
        plus[k][c] += h;
        minus[k][c] -= h;
        const double fd = (p.value(plus, p.beta) - p.value(minus, p.beta)) / (2 * h);
        if (std::abs(fd) < 1e-8 && std::abs(analytic[c]) < 1e-8) continue;
        EXPECT_LT(rel_err(analytic[c], fd), 1e-4) << "joint " << k + 1 << " comp " << c;
      }
    }
    for (int b = 0; b < kNumBetas; ++b) {
      ShapeParams plus = p.beta, minus = p.beta;
      plus[b] += h;
      minus[b] -= h;
      const double fd = (p.value(p.local6d, plus) - p.value(p.local6d, minus)) / (2 * h);
      if (std::abs(fd) < 1e-8 && std::abs(g.beta[b]) < 1e-8) continue;
      EXPECT_LT(rel_err(g.beta[b], fd), 1e-4) << "beta " << b;
    }
  }
}
