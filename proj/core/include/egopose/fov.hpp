// Headset camera frustum model and hand visibility masks.
//
// Visibility is a pyramidal test in the head frame (x forward through the
// eyes, y left, z up): the hand must be in front of the head and within half
// the horizontal and vertical field of view on each axis. Points exactly on
// the boundary count as visible.
#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "egopose/ingest.hpp"

namespace egopose {

class FovConfig {
 public:
  /// Vertical angle defaults to the horizontal one.
  explicit FovConfig(double alpha_h_deg, std::optional<double> alpha_v_deg = std::nullopt);

  /// fisheye180 (180/180), quest2 (120/120), hololens2 (90/90).
  static FovConfig preset(std::string_view name);

  double alpha_h_deg() const { return alpha_h_deg_; }
  double alpha_v_deg() const { return alpha_v_deg_; }

 private:
  double alpha_h_deg_;
  double alpha_v_deg_;
};

struct HandVisibility {
  bool left = true;
  bool right = true;
  friend bool operator==(const HandVisibility&, const HandVisibility&) = default;
};

using VisibilityMask = std::vector<HandVisibility>;

Vec3 to_head_frame(const Vec3& head_position, const RotationMatrix& head_orientation,
                   const Vec3& point);

bool is_in_fov(const FovConfig& cfg, const Vec3& hand_in_head_frame);

VisibilityMask visibility_mask(const FovConfig& cfg, const ThreePointTrack& track);

/// Independent Bernoulli(p) drop per frame and hand; deterministic per seed.
VisibilityMask random_mask(double p, std::uint64_t seed, std::size_t frame_count);

VisibilityMask full_visibility(std::size_t frame_count);

/// Copy of track with the visibility bits replaced by mask.
ThreePointTrack with_visibility(ThreePointTrack track, const VisibilityMask& mask);

/// Fraction of (frame, hand) slots that are masked out.
double masked_fraction(const VisibilityMask& mask);

}  // namespace egopose
