// Parametric 22-joint body model with linear shape blending.
//
// Joint 0 is the root (pelvis). Joints are stored in topological order, so
// every parent index is smaller than its child's. The root's mean offset is
// its rest position above the ground origin; it is used only to build the
// grounded rest pose, never by forward kinematics itself.
#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "egopose/rotation.hpp"

namespace egopose {

inline constexpr int kNumJoints = 22;
inline constexpr int kNumLocalJoints = kNumJoints - 1;
inline constexpr int kNumBetas = 16;
inline constexpr int kSkeletonFormatVersion = 1;

using ShapeParams = std::array<double, kNumBetas>;
using JointPositions = std::array<Vec3, kNumJoints>;

/// 3x16 linear blend block of one joint, row-major by spatial axis.
using BlendBlock = std::array<std::array<double, kNumBetas>, 3>;

struct BodyPose {
  Vec3 root_position;
  RotationMatrix root_orientation = Mat3::identity();
  /// local_rotations[j - 1] belongs to joint j.
  std::array<RotationMatrix, kNumLocalJoints> local_rotations = make_identity_rotations();

  static std::array<RotationMatrix, kNumLocalJoints> make_identity_rotations() {
    std::array<RotationMatrix, kNumLocalJoints> out;
    out.fill(Mat3::identity());
    return out;
  }
  friend bool operator==(const BodyPose&, const BodyPose&) = default;
};

struct FkResult {
  JointPositions joint_position{};
  std::array<RotationMatrix, kNumJoints> joint_orientation{};
};

struct BodyMeasurements {
  double height = 0.0;      // m
  double arm_length = 0.0;  // m
};

class SkeletonModel {
 public:
  /// Parses a skeleton document; rejects unknown versions and malformed trees.
  static SkeletonModel from_json_text(std::string_view text);
  static SkeletonModel load(const std::filesystem::path& path);
  /// The shipped default_skeleton.json, embedded at build time.
  static const SkeletonModel& default_model();

  std::string to_json_text() const;

  int parent(int joint) const { return parents_[joint]; }
  const std::array<int, kNumJoints>& parents() const { return parents_; }
  const Vec3& mean_offset(int joint) const { return mean_offsets_[joint]; }
  const BlendBlock& blend(int joint) const { return blend_[joint]; }
  const std::vector<Vec3>& proxies(int joint) const { return proxies_[joint]; }
  const std::string& joint_name(int joint) const { return joint_names_[joint]; }
  std::span<const int> arm_chain() const { return arm_chain_; }
  int head_joint() const { return head_joint_; }
  int left_hand_joint() const { return left_hand_joint_; }
  int right_hand_joint() const { return right_hand_joint_; }
  int proxy_count() const { return proxy_count_; }

  /// Same topology with every offset, blend column and proxy scaled by
  /// factor. Used to apply a T-pose calibration ratio.
  SkeletonModel scaled(double factor) const;

 private:
  SkeletonModel() = default;
  void validate_and_index();

  std::array<int, kNumJoints> parents_{};
  std::array<Vec3, kNumJoints> mean_offsets_{};
  std::array<BlendBlock, kNumJoints> blend_{};
  std::array<std::vector<Vec3>, kNumJoints> proxies_{};
  std::array<std::string, kNumJoints> joint_names_{};
  std::vector<int> arm_chain_;
  int head_joint_ = 15;
  int left_hand_joint_ = 20;
  int right_hand_joint_ = 21;
  int proxy_count_ = 0;
};

/// offset_j = mean_offset_j + blend_j * beta, for all joints (root included).
std::array<Vec3, kNumJoints> bone_offsets(const SkeletonModel& model, const ShapeParams& beta);

FkResult forward_kinematics(const SkeletonModel& model, const BodyPose& pose,
                            const ShapeParams& beta);

/// Root position that puts the head joint exactly on the tracked head.
Vec3 root_from_head(const SkeletonModel& model, const Vec3& tracked_head_position,
                    const RotationMatrix& root_orientation,
                    std::span<const RotationMatrix, kNumLocalJoints> local_rotations,
                    const ShapeParams& beta);

/// Identity rotations with the root at its shape-dependent rest height, so the
/// soles touch z = 0.
BodyPose rest_pose(const SkeletonModel& model, const ShapeParams& beta);

BodyMeasurements t_pose_measurements(const SkeletonModel& model, const ShapeParams& beta);

/// World-space proxy surface points, joint-major in the order of
/// model.proxies(). Proxy offsets scale with |offset_j(beta)| / |mean_offset_j|.
std::vector<Vec3> proxy_vertices(const SkeletonModel& model, const FkResult& fk,
                                 const ShapeParams& beta);

/// Reverse-mode derivative of forward_kinematics with respect to joint
/// positions only (orientation outputs are treated as unused).
struct FkGradient {
  Vec3 root_position;
  Mat3 root_orientation;
  std::array<Mat3, kNumLocalJoints> local_rotations{};
  ShapeParams beta{};
};

FkGradient forward_kinematics_backward(const SkeletonModel& model, const BodyPose& pose,
                                       const ShapeParams& beta, const FkResult& fk,
                                       std::span<const Vec3, kNumJoints> grad_positions);

}  // namespace egopose
