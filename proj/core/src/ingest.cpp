#include "egopose/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "egopose/errors.hpp"

namespace egopose {

namespace {

constexpr char kSequenceMagic[4] = {'E', 'P', 'S', 'Q'};
constexpr std::size_t kValuesPerFrame = 3 + 9 + 9 * kNumLocalJoints;
constexpr double kPi = 3.14159265358979323846;

// Joint indices of the default topology used by the generator.
enum Joint : int {
  kPelvis = 0,
  kLeftHip = 1,
  kRightHip = 2,
  kSpine1 = 3,
  kLeftKnee = 4,
  kRightKnee = 5,
  kSpine2 = 6,
  kLeftAnkle = 7,
  kRightAnkle = 8,
  kSpine3 = 9,
  kNeck = 12,
  kHead = 15,
  kLeftShoulder = 16,
  kRightShoulder = 17,
  kLeftElbow = 18,
  kRightElbow = 19,
  kLeftWrist = 20,
  kRightWrist = 21,
};

template <typename T>
T to_little_endian(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

template <typename T>
void write_pod(std::ostream& out, T value) {
  value = to_little_endian(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorCode::kFormat, std::string("truncated file while reading ") + what);
  }
  return to_little_endian(value);
}

void write_mat(std::ostream& out, const Mat3& m) {
  for (double v : m.m) write_pod(out, v);
}

Mat3 read_mat(std::istream& in) {
  Mat3 m;
  for (double& v : m.m) v = read_pod<double>(in, "frame block");
  return m;
}

// Keyframed random targets, eased with smoothstep between keys.
template <std::size_t N>
class KeyTrack {
 public:
  using Value = std::array<double, N>;

  template <typename Sampler>
  KeyTrack(std::mt19937_64& rng, double duration, double min_gap, double max_gap,
           Sampler&& sample) {
    std::uniform_real_distribution<double> gap(min_gap, max_gap);
    double t = 0.0;
    times_.push_back(t);
    values_.push_back(sample(rng));
    while (t < duration) {
      t += gap(rng);
      times_.push_back(t);
      values_.push_back(sample(rng));
    }
  }

  Value at(double t) const {
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return values_.front();
    if (it == times_.end()) return values_.back();
    const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
    const std::size_t lo = hi - 1;
    const double u = (t - times_[lo]) / (times_[hi] - times_[lo]);
    const double s = u * u * (3.0 - 2.0 * u);
    Value out;
    for (std::size_t i = 0; i < N; ++i) out[i] = values_[lo][i] + s * (values_[hi][i] - values_[lo][i]);
    return out;
  }

 private:
  std::vector<double> times_;
  std::vector<Value> values_;
};

// Sum of a few random low-frequency sinusoids, bounded by 1 in magnitude.
class SmoothNoise {
 public:
  SmoothNoise(std::mt19937_64& rng, double min_hz, double max_hz) {
    std::uniform_real_distribution<double> freq(min_hz, max_hz);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    for (auto& c : components_) c = {freq(rng), phase(rng)};
  }

  double at(double t) const {
    double acc = 0.0;
    for (const auto& [f, p] : components_) acc += std::sin(2.0 * kPi * f * t + p);
    return acc / static_cast<double>(components_.size());
  }

 private:
  std::array<std::pair<double, double>, 3> components_{};
};

// Left arm rests along +y. azimuth 0 points sideways, -pi/2 forward;
// elevation lifts the arm. The right arm mirrors through the sagittal plane.
RotationMatrix left_arm(double elevation, double azimuth) {
  return rotation_z(azimuth) * rotation_x(elevation);
}
RotationMatrix right_arm(double elevation, double azimuth) {
  return rotation_z(-azimuth) * rotation_x(-elevation);
}

struct ArmTarget {
  double elevation;
  double azimuth;
  double flex;
  double swing = 0.0;  // forward swing about the lateral axis
};

constexpr double kArmsDownElevation = -1.35;

// Random arm target: reaches anywhere from low-behind to high-front, with an
// occasional return to the relaxed pose.
std::array<double, 6> sample_arm_targets(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, 6> out;
  for (int side = 0; side < 2; ++side) {
    if (unit(rng) < 0.3) {
      out[side * 3 + 0] = kArmsDownElevation;
      out[side * 3 + 1] = -0.1;
      out[side * 3 + 2] = 0.2;
    } else {
      out[side * 3 + 0] = -1.4 + 2.7 * unit(rng);
      out[side * 3 + 1] = -1.7 + 2.1 * unit(rng);
      out[side * 3 + 2] = 1.6 * unit(rng);
    }
  }
  return out;
}

struct UpperBody {
  ArmTarget left{kArmsDownElevation, -0.1, 0.2};
  ArmTarget right{kArmsDownElevation, -0.1, 0.2};
  double head_yaw = 0.0;
  double head_pitch = 0.0;
  double spine_twist = 0.0;
  double spine_bend = 0.0;
};

void apply_upper_body(const UpperBody& upper, BodyPose& pose) {
  auto& local = pose.local_rotations;
  const auto set = [&](int joint, const RotationMatrix& r) { local[joint - 1] = r; };
  const RotationMatrix spine = rotation_z(upper.spine_twist / 3.0) * rotation_y(upper.spine_bend / 3.0);
  set(kSpine1, spine);
  set(kSpine2, spine);
  set(kSpine3, spine);
  set(kNeck, rotation_z(0.4 * upper.head_yaw) * rotation_y(0.4 * upper.head_pitch));
  set(kHead, rotation_z(0.6 * upper.head_yaw) * rotation_y(0.6 * upper.head_pitch));
  set(kLeftShoulder,
      rotation_y(-upper.left.swing) * left_arm(upper.left.elevation, upper.left.azimuth));
  set(kRightShoulder,
      rotation_y(-upper.right.swing) * right_arm(upper.right.elevation, upper.right.azimuth));
  set(kLeftElbow, rotation_z(-upper.left.flex));
  set(kRightElbow, rotation_z(upper.right.flex));
  set(kLeftWrist, rotation_x(0.2 * upper.left.flex));
  set(kRightWrist, rotation_x(-0.2 * upper.right.flex));
}

struct Gait {
  double phase = 0.0;
  double amplitude = 1.0;
};

// Hip flexion swings the leg forward; knee flexion folds the shank back.
void apply_legs(const Gait& gait, double crouch, BodyPose& pose) {
  auto& local = pose.local_rotations;
  const double a = gait.amplitude;
  const double s = std::sin(gait.phase);
  const double left_knee = crouch + a * 0.55 * (0.5 - 0.5 * std::cos(gait.phase + 0.6));
  const double right_knee = crouch + a * 0.55 * (0.5 - 0.5 * std::cos(gait.phase + kPi + 0.6));
  local[kLeftHip - 1] = rotation_y(-(a * 0.42 * s + 0.5 * crouch));
  local[kRightHip - 1] = rotation_y(-(-a * 0.42 * s + 0.5 * crouch));
  local[kLeftKnee - 1] = rotation_y(left_knee);
  local[kRightKnee - 1] = rotation_y(right_knee);
  local[kLeftAnkle - 1] = rotation_y(-0.5 * crouch + a * 0.15 * s);
  local[kRightAnkle - 1] = rotation_y(-0.5 * crouch - a * 0.15 * s);
}

UpperBody swinging_arms(const Gait& gait) {
  UpperBody upper;
  const double swing = gait.amplitude * 0.35 * std::sin(gait.phase);
  // Each arm swings opposite to the leg on its side.
  upper.left = {kArmsDownElevation, -0.1, 0.25, -swing};
  upper.right = {kArmsDownElevation, -0.1, 0.25, swing};
  upper.spine_twist = -0.08 * gait.amplitude * std::sin(gait.phase);
  return upper;
}

void ground(const SkeletonModel& model, const ShapeParams& beta, BodyPose& pose) {
  pose.root_position.z = 0.0;
  const FkResult fk = forward_kinematics(model, pose, beta);
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& v : proxy_vertices(model, fk, beta)) lowest = std::min(lowest, v.z);
  pose.root_position.z = -lowest;
}

}  // namespace

// -- file I/O ------------------------------------------------------------------

void save_sequence(const MotionSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  nlohmann::json header = {
      {"version", kSequenceFormatVersion},
      {"fps", seq.fps},
      {"frame_count", seq.frame_count()},
      {"joints", kNumJoints},
      {"betas", kNumBetas},
      {"values_per_frame", kValuesPerFrame},
      {"subject_id", seq.subject_id},
      {"sequence_id", seq.sequence_id},
  };
  const std::string text = header.dump();
  out.write(kSequenceMagic, 4);
  write_pod<std::uint32_t>(out, kSequenceFormatVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_pod(out, seq.fps);
  for (double b : seq.beta) write_pod(out, b);
  for (const auto& pose : seq.poses) {
    write_pod(out, pose.root_position.x);
    write_pod(out, pose.root_position.y);
    write_pod(out, pose.root_position.z);
    write_mat(out, pose.root_orientation);
    for (const auto& r : pose.local_rotations) write_mat(out, r);
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

MotionSequence load_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kSequenceMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, path.string() + " is not an EPSQ file");
  }
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kSequenceFormatVersion) {
    throw Error(ErrorCode::kFormat, "unsupported EPSQ version " + std::to_string(version) +
                                        " (expected " + std::to_string(kSequenceFormatVersion) + ")");
  }
  const auto header_bytes = read_pod<std::uint32_t>(in, "header length");
  std::string text(header_bytes, '\0');
  if (!in.read(text.data(), header_bytes)) throw Error(ErrorCode::kFormat, "truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad header JSON: ") + e.what());
  }
  MotionSequence seq;
  std::size_t frames = 0;
  try {
    if (header.at("version").get<std::uint32_t>() != version) {
      throw Error(ErrorCode::kFormat, "header version disagrees with binary version");
    }
    if (header.at("values_per_frame").get<std::size_t>() != kValuesPerFrame) {
      throw Error(ErrorCode::kFormat, "unexpected values_per_frame");
    }
    frames = header.at("frame_count").get<std::size_t>();
    seq.subject_id = header.value("subject_id", "");
    seq.sequence_id = header.value("sequence_id", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("bad header: ") + e.what());
  }
  seq.fps = read_pod<double>(in, "fps");
  for (double& b : seq.beta) b = read_pod<double>(in, "beta");
  seq.poses.resize(frames);
  for (auto& pose : seq.poses) {
    pose.root_position.x = read_pod<double>(in, "frame block");
    pose.root_position.y = read_pod<double>(in, "frame block");
    pose.root_position.z = read_pod<double>(in, "frame block");
    pose.root_orientation = read_mat(in);
    for (auto& r : pose.local_rotations) r = read_mat(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::kFormat, "trailing bytes after frame block");
  }
  if (!(seq.fps > 0.0) || seq.poses.size() < 2) {
    throw Error(ErrorCode::kFormat, "sequence needs fps > 0 and at least 2 frames");
  }
  return seq;
}

std::vector<MotionSequence> load_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "dataset path does not exist: " + path.string());
  if (!fs::is_directory(path)) return {load_sequence(path)};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".epsq") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MotionSequence> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_sequence(f));
  return out;
}

// -- synthesis -------------------------------------------------------------------

MotionProfile parse_profile(std::string_view name) {
  if (name == "walk") return MotionProfile::kWalk;
  if (name == "reach") return MotionProfile::kReach;
  if (name == "idle") return MotionProfile::kIdle;
  if (name == "mixed") return MotionProfile::kMixed;
  throw Error(ErrorCode::kInvalidProfile, "unknown profile '" + std::string(name) + "'");
}

std::string_view profile_name(MotionProfile profile) {
  switch (profile) {
    case MotionProfile::kWalk: return "walk";
    case MotionProfile::kReach: return "reach";
    case MotionProfile::kIdle: return "idle";
    case MotionProfile::kMixed: return "mixed";
  }
  return "unknown";
}

MotionSequence synthesize_sequence(const SkeletonModel& model, std::uint64_t seed,
                                   MotionProfile profile, double duration_s, double fps,
                                   const ShapeParams& beta) {
  if (!(fps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "fps must be positive");
  const auto frames = static_cast<std::size_t>(std::floor(duration_s * fps + 1e-9));
  if (frames < 2) {
    throw Error(ErrorCode::kTooShort, "duration * fps must cover at least 2 frames");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double horizon = duration_s + 5.0;

  const double start_heading = (unit(rng) * 2.0 - 1.0) * kPi;
  const Vec3 start{unit(rng) * 2.0 - 1.0, unit(rng) * 2.0 - 1.0, 0.0};
  const double base_speed = 0.9 + 0.5 * unit(rng);
  const double stride_hz = 0.8 + 0.2 * unit(rng);
  SmoothNoise turn_rate(rng, 0.03, 0.2);
  SmoothNoise speed_mod(rng, 0.05, 0.3);
  SmoothNoise sway_x(rng, 0.1, 0.4);
  SmoothNoise sway_y(rng, 0.1, 0.4);

  KeyTrack<6> arms(rng, horizon, 0.9, 2.5, sample_arm_targets);
  KeyTrack<4> look(rng, horizon, 0.8, 2.5, [](std::mt19937_64& g) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return std::array<double, 4>{-0.9 + 1.8 * u(g), -0.5 + 0.85 * u(g), -0.25 + 0.5 * u(g),
                                 -0.1 + 0.35 * u(g)};
  });
  KeyTrack<2> stance(rng, horizon, 1.5, 4.0, [](std::mt19937_64& g) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // heading change, crouch
    return std::array<double, 2>{-0.7 + 1.4 * u(g), 0.3 * u(g) * u(g)};
  });
  KeyTrack<1> walk_gate(rng, horizon, 2.0, 5.0, [](std::mt19937_64& g) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return std::array<double, 1>{u(g) < 0.6 ? 1.0 : 0.0};
  });

  MotionSequence seq;
  seq.fps = fps;
  seq.beta = beta;
  seq.subject_id = "synthetic";
  seq.sequence_id = std::string(profile_name(profile)) + "_" + std::to_string(seed);
  seq.poses.reserve(frames);

  const double dt = 1.0 / fps;
  double heading = start_heading;
  Vec3 planar = start;
  Gait gait;

  for (std::size_t f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) * dt;
    BodyPose pose;
    UpperBody upper;
    double crouch = 0.0;
    double speed = 0.0;
    double lean = 0.0;

    const auto arm = arms.at(t);
    const auto gaze = look.at(t);
    const UpperBody reaching = [&] {
      UpperBody u;
      u.left = {arm[0], arm[1], arm[2]};
      u.right = {arm[3], arm[4], arm[5]};
      u.head_yaw = gaze[0];
      u.head_pitch = gaze[1];
      u.spine_twist = gaze[2];
      u.spine_bend = gaze[3];
      return u;
    }();

    switch (profile) {
      case MotionProfile::kWalk: {
        gait.amplitude = 1.0;
        speed = base_speed * (1.0 + 0.2 * speed_mod.at(t));
        upper = swinging_arms(gait);
        upper.head_yaw = 0.3 * gaze[0];
        upper.head_pitch = 0.3 * gaze[1];
        heading += 0.35 * turn_rate.at(t) * dt;
        lean = 0.05;
        break;
      }
      case MotionProfile::kReach: {
        gait.amplitude = 0.0;
        upper = reaching;
        const auto st = stance.at(t);
        heading = start_heading + st[0];
        crouch = st[1];
        planar = start + Vec3{0.05 * sway_x.at(t), 0.05 * sway_y.at(t), 0.0};
        break;
      }
      case MotionProfile::kIdle: {
        gait.amplitude = 0.0;
        upper.left.elevation += 0.1 * sway_x.at(t);
        upper.right.elevation += 0.1 * sway_y.at(t);
        upper.head_yaw = 0.3 * gaze[0];
        upper.head_pitch = 0.2 * gaze[1];
        heading = start_heading + 0.2 * turn_rate.at(t);
        planar = start + Vec3{0.02 * sway_x.at(t), 0.02 * sway_y.at(t), 0.0};
        break;
      }
      case MotionProfile::kMixed: {
        gait.amplitude = walk_gate.at(t)[0];
        speed = 0.8 * base_speed * gait.amplitude;
        upper = reaching;
        heading += 0.35 * turn_rate.at(t) * dt;
        lean = 0.03 * gait.amplitude;
        break;
      }
    }

    if (speed > 0.0) {
      planar += Vec3{std::cos(heading), std::sin(heading), 0.0} * (speed * dt);
      gait.phase += 2.0 * kPi * stride_hz * (speed / base_speed) * dt;
    }

    pose.root_position = planar;
    pose.root_orientation = rotation_z(heading) * rotation_y(lean) *
                            rotation_x(0.03 * gait.amplitude * std::sin(gait.phase));
    apply_legs(gait, crouch, pose);
    apply_upper_body(upper, pose);
    ground(model, beta, pose);
    seq.poses.push_back(pose);
  }
  return seq;
}

ShapeParams shape_for_height(const SkeletonModel& model, double height_m, double arm_beta,
                             double leg_beta) {
  ShapeParams beta{};
  beta[1] = arm_beta;
  beta[2] = leg_beta;
  // Height is affine in beta[0] as long as every bone length stays positive.
  const double h0 = t_pose_measurements(model, beta).height;
  ShapeParams probe = beta;
  probe[0] = 1.0;
  const double slope = t_pose_measurements(model, probe).height - h0;
  if (slope == 0.0) throw Error(ErrorCode::kInvalidArgument, "model height does not depend on beta[0]");
  beta[0] = (height_m - h0) / slope;
  return beta;
}

ShapeParams random_subject_shape(const SkeletonModel& model, std::uint64_t seed, double min_height_m,
                                 double max_height_m) {
  if (!(min_height_m > 0.0) || max_height_m < min_height_m) {
    throw Error(ErrorCode::kInvalidArgument, "bad subject height range");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double height = min_height_m + (max_height_m - min_height_m) * unit(rng);
  const double arm = 2.0 * unit(rng) - 1.0;
  const double leg = 2.0 * unit(rng) - 1.0;
  return shape_for_height(model, height, arm, leg);
}

// -- tracks ------------------------------------------------------------------------

ThreePointTrack extract_three_point(const MotionSequence& seq, const SkeletonModel& model) {
  ThreePointTrack track;
  track.fps = seq.fps;
  track.frames.reserve(seq.frame_count());
  for (const auto& pose : seq.poses) {
    const FkResult fk = forward_kinematics(model, pose, seq.beta);
    TrackFrame frame;
    frame.head = {fk.joint_position[model.head_joint()], fk.joint_orientation[model.head_joint()]};
    frame.left = {fk.joint_position[model.left_hand_joint()],
                  fk.joint_orientation[model.left_hand_joint()]};
    frame.right = {fk.joint_position[model.right_hand_joint()],
                   fk.joint_orientation[model.right_hand_joint()]};
    track.frames.push_back(frame);
  }
  return track;
}

ThreePointTrack apply_offset(ThreePointTrack track, const Vec3& offset) {
  for (auto& f : track.frames) {
    f.head.position += offset;
    f.left.position += offset;
    f.right.position += offset;
  }
  return track;
}

MotionSequence apply_offset(MotionSequence seq, const Vec3& offset) {
  for (auto& pose : seq.poses) pose.root_position += offset;
  return seq;
}

std::vector<JointPositions> sequence_joint_positions(const MotionSequence& seq,
                                                     const SkeletonModel& model) {
  std::vector<JointPositions> out;
  out.reserve(seq.frame_count());
  for (const auto& pose : seq.poses) out.push_back(forward_kinematics(model, pose, seq.beta).joint_position);
  return out;
}

std::pair<std::vector<MotionSequence>, std::vector<MotionSequence>> split_dataset(
    const std::vector<MotionSequence>& seqs, double train_fraction, std::uint64_t seed) {
  const std::size_t n = seqs.size();
  if (n < 2) throw Error(ErrorCode::kTooFewSequences, "need at least 2 sequences to split");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "train_fraction must be in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto train_count = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
  train_count = std::min(train_count, n - 1);
  std::pair<std::vector<MotionSequence>, std::vector<MotionSequence>> out;
  for (std::size_t i = 0; i < n; ++i) {
    (i < train_count ? out.first : out.second).push_back(seqs[order[i]]);
  }
  return out;
}

}  // namespace egopose
