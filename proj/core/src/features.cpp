#include "egopose/features.hpp"

#include <cmath>

#include "egopose/errors.hpp"

namespace egopose {

namespace {

const TrackedPose& joint_of(const TrackFrame& f, int joint) {
  return joint == 0 ? f.head : (joint == 1 ? f.left : f.right);
}

bool visible(const TrackFrame& f, int joint) {
  return joint == 0 || (joint == 1 ? f.left_visible : f.right_visible);
}

void put3(double* row, int offset, const Vec3& v) {
  row[offset] = v.x;
  row[offset + 1] = v.y;
  row[offset + 2] = v.z;
}

void put6(double* row, int offset, const Rot6D& r) {
  for (int i = 0; i < 6; ++i) row[offset + i] = r[i];
}

}  // namespace

std::array<int, 20> hand_feature_slots(TrackedJoint hand) {
  const int j = static_cast<int>(hand);
  if (j == 0) throw Error(ErrorCode::kInvalidArgument, "the head has no hand slots");
  std::array<int, 20> out{};
  int n = 0;
  for (int i = 0; i < 6; ++i) out[n++] = feature_slot::kOrientation + 6 * j + i;
  for (int i = 0; i < 6; ++i) out[n++] = feature_slot::kAngularVelocity + 6 * j + i;
  for (int i = 0; i < 3; ++i) out[n++] = feature_slot::kLinearVelocity + 3 * j + i;
  for (int i = 0; i < 3; ++i) out[n++] = feature_slot::kTemporalPosition + 3 * j + i;
  for (int i = 0; i < 2; ++i) out[n++] = feature_slot::kHandHorizontal + 2 * (j - 1) + i;
  return out;
}

const char* feature_mode_name(FeatureMode mode) {
  return mode == FeatureMode::kDecomposed ? "decomposed" : "global";
}

FeatureMode parse_feature_mode(std::string_view name) {
  if (name == "decomposed") return FeatureMode::kDecomposed;
  if (name == "global") return FeatureMode::kGlobal;
  throw Error(ErrorCode::kInvalidArgument, "unknown feature mode '" + std::string(name) + "'");
}

Vec3 snap_position(const Vec3& p) {
  constexpr double scale = 1.0 / kPositionQuantum;
  return {std::nearbyint(p.x * scale) * kPositionQuantum, std::nearbyint(p.y * scale) * kPositionQuantum,
          std::nearbyint(p.z * scale) * kPositionQuantum};
}

std::vector<Vec3> temporal_normalize(std::span<const Vec3> positions, const Vec3& anchor) {
  std::vector<Vec3> out;
  out.reserve(positions.size());
  for (const auto& p : positions) out.push_back(p - anchor);
  return out;
}

SpatialFeature spatial_normalize(const Vec3& head_position, const Vec3& hand_position) {
  return {hand_position.x - head_position.x, hand_position.y - head_position.y, head_position.z};
}

std::vector<Vec3> linear_velocity(std::span<const Vec3> positions, double fps) {
  std::vector<Vec3> out(positions.size());
  for (std::size_t t = 1; t < positions.size(); ++t) out[t] = (positions[t] - positions[t - 1]) * fps;
  return out;
}

std::vector<Rot6D> angular_velocity(std::span<const RotationMatrix> orientations) {
  std::vector<Rot6D> out(orientations.size(), Rot6D::identity());
  for (std::size_t t = 1; t < orientations.size(); ++t) {
    out[t] = matrix_to_rot6d(relative_rotation(orientations[t - 1], orientations[t]));
  }
  return out;
}

FeatureWindow build_window_features(std::span<const TrackFrame> window, int tau, double fps,
                                    FeatureMode mode) {
  if (tau <= 0 || window.size() != static_cast<std::size_t>(tau)) {
    throw Error(ErrorCode::kWindowLengthMismatch,
                "window has " + std::to_string(window.size()) + " frames, expected " + std::to_string(tau));
  }
  const auto n = static_cast<std::size_t>(tau);
  FeatureWindow out;
  out.tau = tau;
  out.values.assign(n * kFeatureDim, 0.0);

  std::vector<Vec3> positions(n);
  std::vector<RotationMatrix> orientations(n);
  std::array<std::vector<Vec3>, 3> snapped;

  for (int j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto& pose = joint_of(window[i], j);
      positions[i] = snap_position(pose.position);
      orientations[i] = pose.orientation;
    }
    snapped[j] = positions;

    // Anchor: first frame where the joint is observed.
    for (std::size_t i = 0; i < n; ++i) {
      if (visible(window[i], j)) {
        out.anchor[j] = positions[i];
        out.anchored[j] = true;
        break;
      }
    }

    const auto lin = linear_velocity(positions, fps);
    const auto ang = angular_velocity(orientations);
    const auto tn = out.anchored[j] ? temporal_normalize(positions, out.anchor[j]) : std::vector<Vec3>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double* row = out.values.data() + i * kFeatureDim;
      put6(row, feature_slot::kOrientation + 6 * j, matrix_to_rot6d(orientations[i]));
      put6(row, feature_slot::kAngularVelocity + 6 * j, ang[i]);
      put3(row, feature_slot::kLinearVelocity + 3 * j, lin[i]);
      put3(row, feature_slot::kTemporalPosition + 3 * j, mode == FeatureMode::kGlobal ? positions[i] : tn[i]);
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.values.data() + i * kFeatureDim;
    const Vec3& head = snapped[0][i];
    for (int hand = 1; hand <= 2; ++hand) {
      const Vec3& p = snapped[hand][i];
      const int slot = feature_slot::kHandHorizontal + 2 * (hand - 1);
      if (mode == FeatureMode::kGlobal) {
        row[slot] = p.x;
        row[slot + 1] = p.y;
      } else {
        const SpatialFeature sn = spatial_normalize(head, p);
        row[slot] = sn.dx;
        row[slot + 1] = sn.dy;
      }
    }
    row[feature_slot::kHeadHeight] = head.z;

    for (int hand = 1; hand <= 2; ++hand) {
      if (visible(window[i], hand)) continue;
      for (int slot : hand_feature_slots(static_cast<TrackedJoint>(hand))) row[slot] = 0.0;
    }
  }
  return out;
}

FeatureWindow build_window_features(std::span<const TrackFrame> window,
                                    std::span<const HandVisibility> mask, int tau, double fps,
                                    FeatureMode mode) {
  if (mask.size() != window.size()) {
    throw Error(ErrorCode::kWindowLengthMismatch, "mask length differs from window length");
  }
  std::vector<TrackFrame> frames(window.begin(), window.end());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].left_visible = mask[i].left;
    frames[i].right_visible = mask[i].right;
  }
  return build_window_features(frames, tau, fps, mode);
}

std::vector<TrackFrame> window_ending_at(const ThreePointTrack& track, std::size_t end_frame, int tau) {
  if (end_frame >= track.frame_count()) {
    throw Error(ErrorCode::kInvalidArgument, "window end beyond track");
  }
  std::vector<TrackFrame> out;
  out.reserve(static_cast<std::size_t>(tau));
  const auto end = static_cast<std::ptrdiff_t>(end_frame);
  for (std::ptrdiff_t i = end - tau + 1; i <= end; ++i) {
    out.push_back(track.frames[static_cast<std::size_t>(std::max<std::ptrdiff_t>(i, 0))]);
  }
  return out;
}

StreamingFeatureBuilder::StreamingFeatureBuilder(int tau, double fps, FeatureMode mode)
    : tau_(tau), fps_(fps), mode_(mode) {
  if (tau <= 0) throw Error(ErrorCode::kInvalidArgument, "window length must be positive");
  scratch_.reserve(static_cast<std::size_t>(tau));
}

const FeatureWindow& StreamingFeatureBuilder::push(const TrackFrame& frame) {
  if (frames_.empty()) {
    frames_.assign(static_cast<std::size_t>(tau_), frame);
  } else {
    frames_.pop_front();
    frames_.push_back(frame);
  }
  scratch_.assign(frames_.begin(), frames_.end());
  window_ = build_window_features(scratch_, tau_, fps_, mode_);
  return window_;
}

}  // namespace egopose
