#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "egopose/errors.hpp"
#include "egopose/fov.hpp"
#include "oracles.hpp"

using namespace egopose;
using egopose::oracle::random_rotation;
using egopose::oracle::static_track;

namespace {

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

ThreePointTrack reach_track() {
  const SkeletonModel& m = SkeletonModel::default_model();
  return extract_three_point(synthesize_sequence(m, 21, MotionProfile::kReach, 20.0, 60.0, ShapeParams{}), m);
}

std::size_t visible_count(const VisibilityMask& mask) {
  std::size_t n = 0;
  for (const auto& v : mask) n += static_cast<std::size_t>(v.left) + static_cast<std::size_t>(v.right);
  return n;
}

}  // namespace

TEST(HeadFrame, HeadPositionMapsToOrigin) {
  std::mt19937_64 rng(1);
  const Vec3 head = random_vec(rng, 5);
  EXPECT_EQ(to_head_frame(head, random_rotation(rng), head), Vec3{});
}

TEST(HeadFrame, IdentityAtOrigin) {
  EXPECT_EQ(to_head_frame({}, Mat3::identity(), {1, 2, 3}), (Vec3{1, 2, 3}));
}

TEST(HeadFrame, YawedHead) {
  // yaw 90 degrees: gaze (local +x) points along world +y
  const Vec3 head{1, 1, 1.6};
  const Vec3 p = to_head_frame(head, rotation_z(deg_to_rad(90)), head + Vec3{0, 1, 0});
  EXPECT_NEAR(p.x, 1.0, 1e-15);
  EXPECT_NEAR(p.y, 0.0, 1e-15);
  EXPECT_NEAR(p.z, 0.0, 1e-15);
}

TEST(InFov, StraightAheadAndBehind) {
  for (double a : {10.0, 90.0, 120.0, 180.0, 359.0}) {
    const FovConfig cfg(a, std::min(a, 179.0));
    EXPECT_TRUE(is_in_fov(cfg, {1, 0, 0}));
    EXPECT_FALSE(is_in_fov(cfg, {-1, 0, 0}));
  }
}

TEST(InFov, BoundaryIsInside) {
  const FovConfig cfg(90.0, 90.0);
  EXPECT_TRUE(is_in_fov(cfg, {1, 1, 0}));
  EXPECT_TRUE(is_in_fov(cfg, {1, 0, -1}));
  EXPECT_TRUE(is_in_fov(cfg, {1, -1, 1}));
  EXPECT_FALSE(is_in_fov(cfg, {1, 1.001, 0}));
  EXPECT_FALSE(is_in_fov(cfg, {1, 0, 1.001}));
}

TEST(InFov, PyramidNotCone) {
  // corner direction is 54.7 degrees off axis but each per-axis angle is 45
  EXPECT_TRUE(is_in_fov(FovConfig(90.0), {1, 1, 1}));
}

TEST(InFov, HorizontalAndVerticalAreIndependent) {
  const FovConfig cfg(120.0, 60.0);
  const double t50 = std::tan(deg_to_rad(50));
  EXPECT_TRUE(is_in_fov(cfg, {1, t50, 0}));
  EXPECT_FALSE(is_in_fov(cfg, {1, 0, t50}));
}

TEST(InFov, BadConfigsRejected) {
  EXPECT_THROW(FovConfig(0.0), Error);
  EXPECT_THROW(FovConfig(360.0), Error);
  EXPECT_THROW(FovConfig(90.0, 181.0), Error);
  EXPECT_THROW(FovConfig::preset("vive"), Error);
}

TEST(InFov, Presets) {
  EXPECT_EQ(FovConfig::preset("fisheye180").alpha_h_deg(), 180.0);
  EXPECT_EQ(FovConfig::preset("quest2").alpha_h_deg(), 120.0);
  EXPECT_EQ(FovConfig::preset("quest2").alpha_v_deg(), 120.0);
  EXPECT_EQ(FovConfig::preset("hololens2").alpha_v_deg(), 90.0);
  EXPECT_EQ(FovConfig(100.0).alpha_v_deg(), 100.0);
}

TEST(InFov, RigidTransformInvariance) {
  std::mt19937_64 rng(2);
  const FovConfig cfg(100.0, 70.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const Vec3 head = random_vec(rng, 3);
    const RotationMatrix orient = random_rotation(rng);
    const Vec3 hand = head + random_vec(rng, 1);
    const RotationMatrix w = random_rotation(rng);
    const Vec3 t = random_vec(rng, 50);
    const bool a = is_in_fov(cfg, to_head_frame(head, orient, hand));
    const bool b = is_in_fov(cfg, to_head_frame(w * head + t, w * orient, w * hand + t));
    const Vec3 local = to_head_frame(head, orient, hand);
    // skip points within rounding distance of a face of the frustum
    const double margin = std::min({std::abs(std::abs(std::atan2(local.y, local.x)) - deg_to_rad(50)),
                                    std::abs(std::abs(std::atan2(local.z, local.x)) - deg_to_rad(35)),
                                    std::abs(local.x)});
    if (margin < 1e-9) continue;
    EXPECT_EQ(a, b);
  }
}

TEST(InFov, MonotoneInAngle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const Vec3 p = random_vec(rng, 1);
    std::uniform_real_distribution<double> u(1.0, 179.0);
    const double h = u(rng), v = u(rng);
    if (is_in_fov(FovConfig(h, v), p)) {
      EXPECT_TRUE(is_in_fov(FovConfig(h + 10, v), p));
      EXPECT_TRUE(is_in_fov(FovConfig(h, std::min(180.0, v + 1)), p));
    }
  }
}

TEST(Mask, WideFovKeepsFrontHemisphere) {
  ThreePointTrack track = static_track(4);
  track.frames[2].left.position = track.frames[2].head.position + Vec3{-0.2, 0.1, -0.3};
  const VisibilityMask mask = visibility_mask(FovConfig(359.9, 179.9), track);
  EXPECT_EQ(mask[0], (HandVisibility{true, true}));
  EXPECT_EQ(mask[2], (HandVisibility{false, true}));
}

TEST(Mask, HandAtHeadIsMasked) {
  ThreePointTrack track = static_track(2);
  track.frames[1].right.position = track.frames[1].head.position;
  const VisibilityMask mask = visibility_mask(FovConfig(180.0), track);
  EXPECT_FALSE(mask[1].right);
  EXPECT_TRUE(mask[1].left);
}

TEST(Mask, ReachInTunedBand) {
  const double f = masked_fraction(visibility_mask(FovConfig(120.0), reach_track()));
  EXPECT_GE(f, 0.10);
  EXPECT_LE(f, 0.90);
}

TEST(Mask, PresetsNonIncreasing) {
  const ThreePointTrack track = reach_track();
  const std::size_t wide = visible_count(visibility_mask(FovConfig::preset("fisheye180"), track));
  const std::size_t mid = visible_count(visibility_mask(FovConfig::preset("quest2"), track));
  const std::size_t narrow = visible_count(visibility_mask(FovConfig::preset("hololens2"), track));
  EXPECT_GE(wide, mid);
  EXPECT_GE(mid, narrow);
  EXPECT_GT(wide, narrow);
}

TEST(Mask, WithVisibilityReplacesBits) {
  ThreePointTrack track = static_track(3);
  VisibilityMask mask = full_visibility(3);
  mask[1].left = false;
  const ThreePointTrack out = with_visibility(track, mask);
  EXPECT_FALSE(out.frames[1].left_visible);
  EXPECT_TRUE(out.frames[1].right_visible);
  EXPECT_EQ(out.frames[1].left.position, track.frames[1].left.position);
}

TEST(RandomMask, Extremes) {
  EXPECT_EQ(masked_fraction(random_mask(0.0, 5, 1000)), 0.0);
  EXPECT_EQ(masked_fraction(random_mask(1.0, 5, 1000)), 1.0);
}

TEST(RandomMask, FractionMatchesProbability) {
  EXPECT_NEAR(masked_fraction(random_mask(0.2, 11, 100000)), 0.2, 0.01);
}

TEST(RandomMask, DeterministicPerSeed) {
  EXPECT_EQ(random_mask(0.3, 4, 500), random_mask(0.3, 4, 500));
  EXPECT_NE(random_mask(0.3, 4, 500), random_mask(0.3, 5, 500));
  EXPECT_THROW(random_mask(1.5, 0, 10), Error);
}
