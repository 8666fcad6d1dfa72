#include "egopose/skeleton.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "egopose/errors.hpp"
#include "default_skeleton_data.hpp"

namespace egopose {

namespace {

using nlohmann::json;

Vec3 vec_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorCode::kFormat, "expected a 3-vector, got " + j.dump());
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

const json& require(const json& doc, const char* key) {
  if (!doc.contains(key)) throw Error(ErrorCode::kFormat, std::string("missing field '") + key + "'");
  return doc.at(key);
}

Vec3 blend_times(const BlendBlock& block, const ShapeParams& beta) {
  Vec3 out;
  for (int axis = 0; axis < 3; ++axis) {
    double acc = 0.0;
    for (int b = 0; b < kNumBetas; ++b) acc += block[axis][b] * beta[b];
    out[axis] = acc;
  }
  return out;
}

}  // namespace

SkeletonModel SkeletonModel::from_json_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kFormat, std::string("skeleton JSON: ") + e.what());
  }
  SkeletonModel model;
  try {
    const int version = require(doc, "version").get<int>();
    if (version != kSkeletonFormatVersion) {
      throw Error(ErrorCode::kFormat, "unsupported skeleton version " + std::to_string(version));
    }
    const auto& parents = require(doc, "parents");
    const auto& offsets = require(doc, "mean_offsets");
    const auto& blend = require(doc, "blend");
    const auto& proxies = require(doc, "proxies");
    const auto& names = require(doc, "joint_names");
    for (const json* arr : {&parents, &offsets, &blend, &proxies, &names}) {
      if (!arr->is_array() || arr->size() != kNumJoints) {
        throw Error(ErrorCode::kFormat, "per-joint arrays must have 22 entries");
      }
    }
    for (int j = 0; j < kNumJoints; ++j) {
      model.parents_[j] = parents[j].get<int>();
      model.mean_offsets_[j] = vec_from_json(offsets[j]);
      model.joint_names_[j] = names[j].get<std::string>();
      const auto& block = blend[j];
      if (!block.is_array() || block.size() != 3) {
        throw Error(ErrorCode::kFormat, "blend block must be 3x16");
      }
      for (int axis = 0; axis < 3; ++axis) {
        if (!block[axis].is_array() || block[axis].size() != kNumBetas) {
          throw Error(ErrorCode::kFormat, "blend block must be 3x16");
        }
        for (int b = 0; b < kNumBetas; ++b) model.blend_[j][axis][b] = block[axis][b].get<double>();
      }
      for (const auto& p : proxies[j]) model.proxies_[j].push_back(vec_from_json(p));
    }
    model.head_joint_ = require(doc, "head_joint").get<int>();
    model.left_hand_joint_ = require(doc, "left_hand_joint").get<int>();
    model.right_hand_joint_ = require(doc, "right_hand_joint").get<int>();
    model.arm_chain_ = require(doc, "arm_chain").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("skeleton JSON: ") + e.what());
  }
  model.validate_and_index();
  return model;
}

SkeletonModel SkeletonModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

const SkeletonModel& SkeletonModel::default_model() {
  static const SkeletonModel model = from_json_text(kDefaultSkeletonJson);
  return model;
}

std::string SkeletonModel::to_json_text() const {
  json doc;
  doc["version"] = kSkeletonFormatVersion;
  doc["joint_names"] = joint_names_;
  doc["parents"] = parents_;
  doc["head_joint"] = head_joint_;
  doc["left_hand_joint"] = left_hand_joint_;
  doc["right_hand_joint"] = right_hand_joint_;
  doc["arm_chain"] = arm_chain_;
  json offsets = json::array();
  json blend = json::array();
  json proxies = json::array();
  for (int j = 0; j < kNumJoints; ++j) {
    offsets.push_back(vec_to_json(mean_offsets_[j]));
    blend.push_back(blend_[j]);
    json list = json::array();
    for (const auto& p : proxies_[j]) list.push_back(vec_to_json(p));
    proxies.push_back(std::move(list));
  }
  doc["mean_offsets"] = std::move(offsets);
  doc["blend"] = std::move(blend);
  doc["proxies"] = std::move(proxies);
  return doc.dump(1);
}

void SkeletonModel::validate_and_index() {
  if (parents_[0] != -1) throw Error(ErrorCode::kFormat, "joint 0 must be the root");
  for (int j = 1; j < kNumJoints; ++j) {
    // Parent before child rules out cycles and extra roots at once.
    if (parents_[j] < 0 || parents_[j] >= j) {
      throw Error(ErrorCode::kFormat, "joint " + std::to_string(j) + " has invalid parent");
    }
  }
  for (int idx : {head_joint_, left_hand_joint_, right_hand_joint_}) {
    if (idx < 0 || idx >= kNumJoints) throw Error(ErrorCode::kFormat, "tracked joint out of range");
  }
  for (int idx : arm_chain_) {
    if (idx <= 0 || idx >= kNumJoints) throw Error(ErrorCode::kFormat, "arm chain joint out of range");
  }
  proxy_count_ = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    for (const auto& p : proxies_[j]) {
      for (int axis = 0; axis < 3; ++axis) {
        if (!std::isfinite(p[axis])) throw Error(ErrorCode::kFormat, "non-finite proxy");
      }
    }
    proxy_count_ += static_cast<int>(proxies_[j].size());
  }
  const double height = t_pose_measurements(*this, ShapeParams{}).height;
  if (!(height >= 1.4 && height <= 2.1)) {
    throw Error(ErrorCode::kFormat, "mean T-pose height " + std::to_string(height) +
                                        " m outside [1.4, 2.1]");
  }
}

SkeletonModel SkeletonModel::scaled(double factor) const {
  SkeletonModel out = *this;
  for (int j = 0; j < kNumJoints; ++j) {
    out.mean_offsets_[j] *= factor;
    for (auto& row : out.blend_[j]) {
      for (double& v : row) v *= factor;
    }
    for (auto& p : out.proxies_[j]) p *= factor;
  }
  return out;
}

std::array<Vec3, kNumJoints> bone_offsets(const SkeletonModel& model, const ShapeParams& beta) {
  std::array<Vec3, kNumJoints> out;
  for (int j = 0; j < kNumJoints; ++j) {
    out[j] = model.mean_offset(j) + blend_times(model.blend(j), beta);
  }
  return out;
}

FkResult forward_kinematics(const SkeletonModel& model, const BodyPose& pose,
                            const ShapeParams& beta) {
  const auto offsets = bone_offsets(model, beta);
  FkResult fk;
  fk.joint_position[0] = pose.root_position;
  fk.joint_orientation[0] = pose.root_orientation;
  for (int j = 1; j < kNumJoints; ++j) {
    const int p = model.parent(j);
    fk.joint_orientation[j] = compose(fk.joint_orientation[p], pose.local_rotations[j - 1]);
    fk.joint_position[j] = fk.joint_position[p] + fk.joint_orientation[p] * offsets[j];
  }
  return fk;
}

Vec3 root_from_head(const SkeletonModel& model, const Vec3& tracked_head_position,
                    const RotationMatrix& root_orientation,
                    std::span<const RotationMatrix, kNumLocalJoints> local_rotations,
                    const ShapeParams& beta) {
  BodyPose at_origin;
  at_origin.root_orientation = root_orientation;
  std::copy(local_rotations.begin(), local_rotations.end(), at_origin.local_rotations.begin());
  const FkResult fk = forward_kinematics(model, at_origin, beta);
  return tracked_head_position - fk.joint_position[model.head_joint()];
}

BodyPose rest_pose(const SkeletonModel& model, const ShapeParams& beta) {
  BodyPose pose;
  pose.root_position = bone_offsets(model, beta)[0];
  return pose;
}

BodyMeasurements t_pose_measurements(const SkeletonModel& model, const ShapeParams& beta) {
  const BodyPose pose;  // identity rotations, root at origin
  const FkResult fk = forward_kinematics(model, pose, beta);
  const auto vertices = proxy_vertices(model, fk, beta);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& v : vertices) {
    lo = std::min(lo, v.z);
    hi = std::max(hi, v.z);
  }
  const auto offsets = bone_offsets(model, beta);
  double arm = 0.0;
  for (int j : model.arm_chain()) arm += norm(offsets[j]);
  return {hi - lo, arm};
}

std::vector<Vec3> proxy_vertices(const SkeletonModel& model, const FkResult& fk,
                                 const ShapeParams& beta) {
  const auto offsets = bone_offsets(model, beta);
  std::vector<Vec3> out;
  out.reserve(model.proxy_count());
  for (int j = 0; j < kNumJoints; ++j) {
    const double mean_len = norm(model.mean_offset(j));
    const double ratio = mean_len > 0.0 ? norm(offsets[j]) / mean_len : 1.0;
    for (const auto& local : model.proxies(j)) {
      out.push_back(fk.joint_position[j] + fk.joint_orientation[j] * (local * ratio));
    }
  }
  return out;
}

FkGradient forward_kinematics_backward(const SkeletonModel& model, const BodyPose& pose,
                                       const ShapeParams& beta, const FkResult& fk,
                                       std::span<const Vec3, kNumJoints> grad_positions) {
  const auto offsets = bone_offsets(model, beta);
  std::array<Vec3, kNumJoints> g_pos;
  std::copy(grad_positions.begin(), grad_positions.end(), g_pos.begin());
  std::array<Mat3, kNumJoints> g_orient{};
  FkGradient grad;

  for (int j = kNumJoints - 1; j >= 1; --j) {
    const int p = model.parent(j);
    const Mat3& parent_orient = fk.joint_orientation[p];
    const Mat3 parent_t = parent_orient.transposed();
    // position_j = position_p + O_p * offset_j
    g_pos[p] += g_pos[j];
    g_orient[p] += Mat3::outer(g_pos[j], offsets[j]);
    const Vec3 g_offset = parent_t * g_pos[j];
    for (int axis = 0; axis < 3; ++axis) {
      for (int b = 0; b < kNumBetas; ++b) grad.beta[b] += model.blend(j)[axis][b] * g_offset[axis];
    }
    // O_j = O_p * L_j
    g_orient[p] += g_orient[j] * pose.local_rotations[j - 1].transposed();
    grad.local_rotations[j - 1] = parent_t * g_orient[j];
  }
  grad.root_position = g_pos[0];
  grad.root_orientation = g_orient[0];
  return grad;
}

}  // namespace egopose
