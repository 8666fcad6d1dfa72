// Motion sequences, three-point tracks, and the synthetic motion generator.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "egopose/skeleton.hpp"

namespace egopose {

inline constexpr double kDefaultFps = 60.0;
inline constexpr std::uint32_t kSequenceFormatVersion = 1;

/// Ground-truth full-body motion. Shape is constant over a sequence, so it is
/// stored once.
struct MotionSequence {
  double fps = kDefaultFps;
  std::vector<BodyPose> poses;
  ShapeParams beta{};
  std::string subject_id;
  std::string sequence_id;

  std::size_t frame_count() const { return poses.size(); }
};

struct TrackedPose {
  Vec3 position;
  RotationMatrix orientation = Mat3::identity();
};

struct TrackFrame {
  TrackedPose head;
  TrackedPose left;
  TrackedPose right;
  bool left_visible = true;
  bool right_visible = true;
};

/// Head and hand poses as reported by a headset.
struct ThreePointTrack {
  double fps = kDefaultFps;
  std::vector<TrackFrame> frames;

  std::size_t frame_count() const { return frames.size(); }
};

// -- .epsq files -------------------------------------------------------------
//
// Layout (little-endian):
//   "EPSQ" | u32 version | u32 header_bytes | header JSON (UTF-8)
//   f64 fps | f64 beta[16] | per frame: f64 root_position[3],
//   f64 root_orientation[9], f64 local_rotations[21][9]
// The JSON header repeats version/fps/frame_count for inspection; the binary
// block is authoritative.

void save_sequence(const MotionSequence& seq, const std::filesystem::path& path);
MotionSequence load_sequence(const std::filesystem::path& path);

/// Loads a single .epsq file or every .epsq file in a directory (sorted by
/// file name).
std::vector<MotionSequence> load_dataset(const std::filesystem::path& path);

// -- synthesis ---------------------------------------------------------------

enum class MotionProfile { kWalk, kReach, kIdle, kMixed };

MotionProfile parse_profile(std::string_view name);
std::string_view profile_name(MotionProfile profile);

/// Deterministic per seed. Walk translates the root along a smooth heading
/// with periodic limb swing; reach moves the hands across and beyond the
/// usual headset field of view; idle stays put; mixed walks while reaching.
/// Every frame is grounded: the lowest proxy vertex sits at z = 0.
MotionSequence synthesize_sequence(const SkeletonModel& model, std::uint64_t seed,
                                   MotionProfile profile, double duration_s, double fps,
                                   const ShapeParams& beta);

/// Shape with the requested T-pose height; arm_beta and leg_beta set the
/// arm and leg coefficients and the overall coefficient absorbs the rest.
ShapeParams shape_for_height(const SkeletonModel& model, double height_m, double arm_beta = 0.0,
                             double leg_beta = 0.0);

/// Subject with a uniformly drawn height in [min_height_m, max_height_m] and
/// arm/leg coefficients in [-1, 1]; deterministic per seed.
ShapeParams random_subject_shape(const SkeletonModel& model, std::uint64_t seed, double min_height_m,
                                 double max_height_m);

// -- tracks ------------------------------------------------------------------

ThreePointTrack extract_three_point(const MotionSequence& seq, const SkeletonModel& model);

ThreePointTrack apply_offset(ThreePointTrack track, const Vec3& offset);
MotionSequence apply_offset(MotionSequence seq, const Vec3& offset);

/// Ground-truth joint positions of every frame.
std::vector<JointPositions> sequence_joint_positions(const MotionSequence& seq,
                                                     const SkeletonModel& model);

/// Train gets ceil(train_fraction * n) sequences, capped at n - 1 so the test
/// side is never empty.
std::pair<std::vector<MotionSequence>, std::vector<MotionSequence>> split_dataset(
    const std::vector<MotionSequence>& seqs, double train_fraction, std::uint64_t seed);

}  // namespace egopose
