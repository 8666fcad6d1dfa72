#include "egopose/fov.hpp"

#include <cmath>
#include <random>

#include "egopose/errors.hpp"

namespace egopose {

namespace {

// Absorbs the last-ulp disagreement between atan2 and the degree conversion so
// that exact-boundary inputs such as (1, 1, 0) at 90 degrees test as inside.
constexpr double kBoundarySlackRad = 1e-12;

}  // namespace

FovConfig::FovConfig(double alpha_h_deg, std::optional<double> alpha_v_deg)
    : alpha_h_deg_(alpha_h_deg), alpha_v_deg_(alpha_v_deg.value_or(alpha_h_deg)) {
  if (!(alpha_h_deg_ > 0.0 && alpha_h_deg_ < 360.0)) {
    throw Error(ErrorCode::kInvalidArgument, "horizontal FoV must be in (0, 360) degrees");
  }
  // 180 is admitted: with x > 0 required, any vertical angle >= 180 is the same
  // constraint, and the fisheye preset needs it.
  if (!(alpha_v_deg_ > 0.0 && alpha_v_deg_ <= 180.0)) {
    throw Error(ErrorCode::kInvalidArgument, "vertical FoV must be in (0, 180] degrees");
  }
}

FovConfig FovConfig::preset(std::string_view name) {
  if (name == "fisheye180") return FovConfig(180.0);
  if (name == "quest2") return FovConfig(120.0);
  if (name == "hololens2") return FovConfig(90.0);
  throw Error(ErrorCode::kInvalidArgument, "unknown FoV preset '" + std::string(name) + "'");
}

Vec3 to_head_frame(const Vec3& head_position, const RotationMatrix& head_orientation,
                   const Vec3& point) {
  return head_orientation.transposed() * (point - head_position);
}

bool is_in_fov(const FovConfig& cfg, const Vec3& p) {
  if (!(p.x > 0.0)) return false;
  const double half_h = deg_to_rad(cfg.alpha_h_deg()) * 0.5 + kBoundarySlackRad;
  const double half_v = deg_to_rad(cfg.alpha_v_deg()) * 0.5 + kBoundarySlackRad;
  return std::abs(std::atan2(p.y, p.x)) <= half_h && std::abs(std::atan2(p.z, p.x)) <= half_v;
}

VisibilityMask visibility_mask(const FovConfig& cfg, const ThreePointTrack& track) {
  VisibilityMask mask;
  mask.reserve(track.frame_count());
  for (const auto& f : track.frames) {
    mask.push_back({is_in_fov(cfg, to_head_frame(f.head.position, f.head.orientation, f.left.position)),
                    is_in_fov(cfg, to_head_frame(f.head.position, f.head.orientation, f.right.position))});
  }
  return mask;
}

VisibilityMask random_mask(double p, std::uint64_t seed, std::size_t frame_count) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "mask probability outside [0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  VisibilityMask mask(frame_count);
  for (auto& m : mask) {
    // Strict comparison keeps p = 0 all-visible and p = 1 all-masked.
    m.left = !(unit(rng) < p);
    m.right = !(unit(rng) < p);
  }
  return mask;
}

VisibilityMask full_visibility(std::size_t frame_count) { return VisibilityMask(frame_count); }

ThreePointTrack with_visibility(ThreePointTrack track, const VisibilityMask& mask) {
  if (mask.size() != track.frame_count()) {
    throw Error(ErrorCode::kShapeMismatch, "mask length differs from track length");
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    track.frames[i].left_visible = mask[i].left;
    track.frames[i].right_visible = mask[i].right;
  }
  return track;
}

double masked_fraction(const VisibilityMask& mask) {
  if (mask.empty()) return 0.0;
  std::size_t hidden = 0;
  for (const auto& m : mask) hidden += static_cast<std::size_t>(!m.left) + static_cast<std::size_t>(!m.right);
  return static_cast<double>(hidden) / (2.0 * static_cast<double>(mask.size()));
}

}  // namespace egopose
