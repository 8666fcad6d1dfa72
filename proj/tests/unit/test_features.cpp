#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "egopose/errors.hpp"
#include "egopose/features.hpp"
#include "oracles.hpp"

using namespace egopose;
using egopose::oracle::static_track;

namespace {

constexpr int kTau = 40;

ThreePointTrack moving_track(std::uint64_t seed = 31, double seconds = 3.0) {
  const SkeletonModel& m = SkeletonModel::default_model();
  return extract_three_point(synthesize_sequence(m, seed, MotionProfile::kMixed, seconds, 60.0,
                                                 shape_for_height(m, 1.75)),
                             m);
}

FeatureWindow window_at(const ThreePointTrack& track, std::size_t end, FeatureMode mode = FeatureMode::kDecomposed) {
  return build_window_features(window_ending_at(track, end, kTau), kTau, track.fps, mode);
}

std::set<int> slots_of(TrackedJoint hand) {
  const auto s = hand_feature_slots(hand);
  return {s.begin(), s.end()};
}

}  // namespace

TEST(TemporalNormalize, Examples) {
  const std::vector<Vec3> constant(5, Vec3{1, 2, 3});
  for (const Vec3& v : temporal_normalize(constant, constant[0])) EXPECT_EQ(v, Vec3{});
  const std::vector<Vec3> ramp{{1, 0, 0}, {2, 0, 0}, {4, 1, 0}};
  const auto tn = temporal_normalize(ramp, ramp[0]);
  EXPECT_EQ(tn[0], Vec3{});
  EXPECT_EQ(tn[2], (Vec3{3, 1, 0}));
  std::vector<Vec3> shifted = ramp;
  for (Vec3& v : shifted) v += Vec3{8, -4, 2};
  EXPECT_EQ(temporal_normalize(shifted, shifted[0]), tn);
}

TEST(SpatialNormalize, Examples) {
  const SpatialFeature same = spatial_normalize({3, 4, 1.7}, {3, 4, 1.7});
  EXPECT_EQ(same.dx, 0.0);
  EXPECT_EQ(same.dy, 0.0);
  const SpatialFeature f = spatial_normalize({3, 4, 1.7}, {3.5, 4.2, 1.2});
  EXPECT_NEAR(f.dx, 0.5, 1e-15);
  EXPECT_NEAR(f.dy, 0.2, 1e-15);
  EXPECT_EQ(f.head_z, 1.7);
  const SpatialFeature g = spatial_normalize({3 + 16, 4 - 8, 1.7}, {3.5 + 16, 4.2 - 8, 1.2});
  EXPECT_NEAR(g.dx, f.dx, 1e-14);
  EXPECT_NEAR(g.dy, f.dy, 1e-14);
  EXPECT_EQ(g.head_z, f.head_z);
}

TEST(LinearVelocity, Examples) {
  const double fps = 60.0;
  std::vector<Vec3> p(10);
  for (int t = 0; t < 10; ++t) p[t] = {t / fps, 0, 0};
  const auto v = linear_velocity(p, fps);
  EXPECT_EQ(v[0], Vec3{});
  for (int t = 1; t < 10; ++t) EXPECT_NEAR(v[t].x, 1.0, 1e-12);
  const std::vector<Vec3> still(4, Vec3{5, 5, 5});
  for (const Vec3& x : linear_velocity(still, fps)) EXPECT_EQ(x, Vec3{});
}

TEST(AngularVelocity, Examples) {
  std::vector<RotationMatrix> still(5, rotation_x(0.3));
  for (const Rot6D& a : angular_velocity(still)) {
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a[i], Rot6D::identity()[i], 1e-15);
  }
  std::vector<RotationMatrix> yaw(6);
  for (int t = 0; t < 6; ++t) yaw[t] = rotation_z(deg_to_rad(t));
  const auto a = angular_velocity(yaw);
  EXPECT_EQ(a[0], Rot6D::identity());
  const double c = std::cos(deg_to_rad(1)), s = std::sin(deg_to_rad(1));
  for (int t = 1; t < 6; ++t) {
    const Rot6D expected{{c, s, 0, -s, c, 0}};
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a[t][i], expected[i], 1e-12);
  }
  std::vector<RotationMatrix> world = yaw;
  for (auto& r : world) r = rotation_y(0.7) * rotation_x(-1.1) * r;
  const auto b = angular_velocity(world);
  for (int t = 0; t < 6; ++t) {
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a[t][i], b[t][i], 1e-12);
  }
}

TEST(Window, StaticTrackIsConstant) {
  const ThreePointTrack track = static_track(kTau);
  const FeatureWindow w = build_window_features(track.frames, kTau, 60.0);
  ASSERT_EQ(w.values.size(), static_cast<std::size_t>(kTau * kFeatureDim));
  for (int t = 0; t < kTau; ++t) {
    for (int s = 0; s < kFeatureDim; ++s) EXPECT_EQ(w.at(t, s), w.at(0, s)) << t << "," << s;
    for (int s = feature_slot::kLinearVelocity; s < feature_slot::kHandHorizontal; ++s) EXPECT_EQ(w.at(t, s), 0.0);
  }
  EXPECT_NEAR(w.at(0, feature_slot::kHeadHeight), 1.6, kPositionQuantum);
  EXPECT_NEAR(w.at(0, feature_slot::kHandHorizontal), 0.4, kPositionQuantum);
  EXPECT_NEAR(w.at(0, feature_slot::kHandHorizontal + 1), 0.2, kPositionQuantum);
  EXPECT_NEAR(w.at(0, feature_slot::kHandHorizontal + 3), -0.2, kPositionQuantum);
  EXPECT_EQ(w.at(0, feature_slot::kAngularVelocity), 1.0);
}

TEST(Window, LengthMismatch) {
  const ThreePointTrack track = static_track(kTau - 1);
  try {
    build_window_features(track.frames, kTau, 60.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kWindowLengthMismatch);
  }
}

TEST(Window, HorizontalOffsetIsBitIdentical) {
  const ThreePointTrack track = moving_track();
  for (const Vec3& off : {Vec3{50, 0, 0}, Vec3{2, 0, 0}, Vec3{-3.25, 10, 0}, Vec3{0, -1000, 0}}) {
    const ThreePointTrack moved = apply_offset(track, off);
    for (std::size_t end : {std::size_t{0}, std::size_t{20}, std::size_t{100}, track.frame_count() - 1}) {
      EXPECT_EQ(window_at(track, end).values, window_at(moved, end).values) << off.x << "," << off.y << " @" << end;
    }
  }
}

TEST(Window, VerticalOffsetOnlyMovesHeadHeight) {
  const ThreePointTrack track = moving_track();
  const double dz = 0.5;
  const ThreePointTrack moved = apply_offset(track, {0, 0, dz});
  const FeatureWindow a = window_at(track, 150);
  const FeatureWindow b = window_at(moved, 150);
  for (int t = 0; t < kTau; ++t) {
    for (int s = 0; s < kFeatureDim; ++s) {
      if (s == feature_slot::kHeadHeight) {
        EXPECT_EQ(b.at(t, s), a.at(t, s) + dz);
      } else {
        EXPECT_EQ(b.at(t, s), a.at(t, s)) << t << "," << s;
      }
    }
  }
}

TEST(Window, GlobalModeIsNotInvariant) {
  const ThreePointTrack track = moving_track();
  EXPECT_NE(window_at(track, 100, FeatureMode::kGlobal).values,
            window_at(apply_offset(track, {2, 0, 0}), 100, FeatureMode::kGlobal).values);
}

TEST(Window, AnchorsAreZero) {
  ThreePointTrack track = moving_track();
  for (int t = 95; t < 105; ++t) track.frames[t].left_visible = false;
  const FeatureWindow w = window_at(track, 100 + kTau - 1);
  // window starts at frame 100 -> left anchor is frame 105, window index 5
  EXPECT_TRUE(w.anchored[1]);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(w.at(0, feature_slot::kTemporalPosition + k), 0.0);
    EXPECT_EQ(w.at(5, feature_slot::kTemporalPosition + 3 + k), 0.0);
    EXPECT_EQ(w.at(0, feature_slot::kTemporalPosition + 6 + k), 0.0);
  }
  EXPECT_EQ(w.anchor[1], snap_position(track.frames[105].left.position));
}

TEST(Window, NeverVisibleHandHasNoAnchor) {
  ThreePointTrack track = moving_track();
  for (auto& f : track.frames) f.right_visible = false;
  const FeatureWindow w = window_at(track, 100);
  EXPECT_FALSE(w.anchored[2]);
  for (int t = 0; t < kTau; ++t) {
    for (int s : hand_feature_slots(TrackedJoint::kRight)) EXPECT_EQ(w.at(t, s), 0.0);
  }
}

TEST(Window, MaskedFramesAreZeroAndLocal) {
  const ThreePointTrack track = moving_track();
  const auto frames = window_ending_at(track, 120, kTau);
  VisibilityMask mask = full_visibility(kTau);
  for (int t = 10; t <= 20; ++t) mask[t].left = false;
  const FeatureWindow full = build_window_features(frames, kTau, 60.0);
  const FeatureWindow masked = build_window_features(frames, mask, kTau, 60.0);
  const std::set<int> left = slots_of(TrackedJoint::kLeft);
  for (int t = 0; t < kTau; ++t) {
    for (int s = 0; s < kFeatureDim; ++s) {
      if (t >= 10 && t <= 20 && left.contains(s)) {
        EXPECT_EQ(masked.at(t, s), 0.0);
      } else {
        EXPECT_EQ(masked.at(t, s), full.at(t, s)) << t << "," << s;
      }
    }
  }
}

TEST(Window, TogglingOneFrameTouchesOnlyItsSlots) {
  const ThreePointTrack track = moving_track();
  const auto frames = window_ending_at(track, 90, kTau);
  const FeatureWindow base = build_window_features(frames, kTau, 60.0);
  for (TrackedJoint hand : {TrackedJoint::kLeft, TrackedJoint::kRight}) {
    const std::set<int> own = slots_of(hand);
    for (int frame : {3, 17, kTau - 1}) {
      VisibilityMask mask = full_visibility(kTau);
      (hand == TrackedJoint::kLeft ? mask[frame].left : mask[frame].right) = false;
      const FeatureWindow w = build_window_features(frames, mask, kTau, 60.0);
      for (int t = 0; t < kTau; ++t) {
        for (int s = 0; s < kFeatureDim; ++s) {
          if (t == frame && own.contains(s)) continue;
          EXPECT_EQ(w.at(t, s), base.at(t, s));
        }
      }
    }
  }
}

TEST(Window, HandSlotsPartitionLayout) {
  const std::set<int> left = slots_of(TrackedJoint::kLeft);
  const std::set<int> right = slots_of(TrackedJoint::kRight);
  EXPECT_EQ(left.size(), 20u);
  EXPECT_EQ(right.size(), 20u);
  for (int s : left) EXPECT_FALSE(right.contains(s));
  EXPECT_FALSE(left.contains(feature_slot::kHeadHeight));
  EXPECT_EQ(*left.begin(), 6);
  EXPECT_EQ(*right.rbegin(), 57);
}

TEST(Window, PaddingRepeatsFirstFrame) {
  const ThreePointTrack track = moving_track();
  const auto frames = window_ending_at(track, 5, kTau);
  for (int i = 0; i < kTau - 6; ++i) EXPECT_EQ(frames[i].head.position, track.frames[0].head.position);
  EXPECT_EQ(frames.back().head.position, track.frames[5].head.position);
}

TEST(Streaming, MatchesBatch) {
  const ThreePointTrack track = moving_track(33, 2.0);
  StreamingFeatureBuilder builder(kTau, track.fps);
  for (std::size_t t = 0; t < track.frame_count(); ++t) {
    const FeatureWindow& s = builder.push(track.frames[t]);
    ASSERT_EQ(s.values, window_at(track, t).values) << "frame " << t;
  }
}
