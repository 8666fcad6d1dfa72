// Position-invariant input features for one window of three-point tracking.
//
// Per-frame layout (59 values, layout version 1):
//
//   [ 0, 18)  orientation 6D           head | left | right   (6 each)
//   [18, 36)  angular velocity 6D      head | left | right   (6 each)
//   [36, 45)  linear velocity, m/s     head | left | right   (3 each)
//   [45, 54)  temporally normalized    head | left | right   (3 each)
//             position, m
//   [54, 58)  hand xy relative to the  left | right          (2 each)
//             head (spatial norm.), m
//   [58]      head height above ground, m
//
// Temporal normalization subtracts each joint's anchor position: frame 0 for
// the head, the first visible frame for a hand. Angular velocity is the 6D
// encoding of prev^T * cur. Masked hand frames have all 20 of that hand's
// slots zeroed.
#pragma once

#include <array>
#include <deque>
#include <span>
#include <vector>

#include "egopose/fov.hpp"
#include "egopose/ingest.hpp"

namespace egopose {

inline constexpr int kFeatureDim = 59;
inline constexpr int kFeatureLayoutVersion = 1;
inline constexpr int kDefaultWindow = 80;

/// Positions are snapped to this grid (2^-16 m, about 15 um) before any
/// differencing, so horizontal offsets on the grid leave features bit-identical.
inline constexpr double kPositionQuantum = 1.0 / 65536.0;

namespace feature_slot {
inline constexpr int kOrientation = 0;
inline constexpr int kAngularVelocity = 18;
inline constexpr int kLinearVelocity = 36;
inline constexpr int kTemporalPosition = 45;
inline constexpr int kHandHorizontal = 54;
inline constexpr int kHeadHeight = 58;
}  // namespace feature_slot

enum class TrackedJoint : int { kHead = 0, kLeft = 1, kRight = 2 };

/// Feature indices owned by a hand (20 each).
std::array<int, 20> hand_feature_slots(TrackedJoint hand);

enum class FeatureMode {
  kDecomposed,  // temporal + spatial normalization (default)
  kGlobal,      // ablation: raw world positions in the position slots
};

const char* feature_mode_name(FeatureMode mode);
FeatureMode parse_feature_mode(std::string_view name);

struct FeatureWindow {
  int tau = 0;
  std::vector<double> values;  // tau x 59, row-major, oldest frame first
  std::array<Vec3, 3> anchor{};
  std::array<bool, 3> anchored{};

  std::span<const double> frame(int i) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(i) * kFeatureDim, kFeatureDim);
  }
  double at(int frame_index, int slot) const {
    return values[static_cast<std::size_t>(frame_index) * kFeatureDim + slot];
  }
};

Vec3 snap_position(const Vec3& p);

std::vector<Vec3> temporal_normalize(std::span<const Vec3> positions, const Vec3& anchor);

struct SpatialFeature {
  double dx = 0.0;
  double dy = 0.0;
  double head_z = 0.0;
};
SpatialFeature spatial_normalize(const Vec3& head_position, const Vec3& hand_position);

/// v_0 = 0, v_t = (p_t - p_{t-1}) * fps.
std::vector<Vec3> linear_velocity(std::span<const Vec3> positions, double fps);

/// a_0 = identity, a_t = 6D(prev^T cur).
std::vector<Rot6D> angular_velocity(std::span<const RotationMatrix> orientations);

/// Visibility is read from each frame's bits. Throws kWindowLengthMismatch if
/// window.size() != tau.
FeatureWindow build_window_features(std::span<const TrackFrame> window, int tau, double fps,
                                    FeatureMode mode = FeatureMode::kDecomposed);

/// Same, with visibility taken from mask instead of the frames.
FeatureWindow build_window_features(std::span<const TrackFrame> window,
                                    std::span<const HandVisibility> mask, int tau, double fps,
                                    FeatureMode mode = FeatureMode::kDecomposed);

/// Window of tau frames ending at end_frame; frames before the start of the
/// track repeat frame 0.
std::vector<TrackFrame> window_ending_at(const ThreePointTrack& track, std::size_t end_frame, int tau);

/// Keeps the last tau frames of a live stream and rebuilds the window per frame.
class StreamingFeatureBuilder {
 public:
  StreamingFeatureBuilder(int tau, double fps, FeatureMode mode = FeatureMode::kDecomposed);

  const FeatureWindow& push(const TrackFrame& frame);
  void reset() { frames_.clear(); }

 private:
  int tau_;
  double fps_;
  FeatureMode mode_;
  std::deque<TrackFrame> frames_;
  std::vector<TrackFrame> scratch_;
  FeatureWindow window_;
};

}  // namespace egopose
