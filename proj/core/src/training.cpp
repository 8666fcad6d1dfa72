#include "egopose/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "egopose/errors.hpp"

namespace egopose {

namespace {

constexpr int kPosElements = kNumJoints * 3;
constexpr int kRotElements = kNumLocalJoints * 6;
constexpr int kBetaOffset = 6 + kRotElements;

constexpr std::uint64_t kShuffleStream = 0x53485546464c45ULL;
constexpr std::uint64_t kMaskStream = 0x4d41534b53ULL;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix(splitmix(seed ^ stream) + index);
}

struct DecodedPrediction {
  PoseOutput output;
  std::array<RotationMatrix, kNumLocalJoints> locals{};
  RotationMatrix root = Mat3::identity();
};

DecodedPrediction decode(const PoseOutput& pred) {
  DecodedPrediction d;
  d.output = pred;
  d.root = rot6d_to_matrix(pred.root_orientation);
  for (int j = 0; j < kNumLocalJoints; ++j) d.locals[j] = rot6d_to_matrix(pred.local_rotations[j]);
  return d;
}

}  // namespace

LossTarget make_loss_target(const SkeletonModel& model, const BodyPose& pose, const ShapeParams& beta) {
  LossTarget t;
  t.pose = pose;
  t.beta = beta;
  t.joints = forward_kinematics(model, pose, beta).joint_position;
  t.tracked_head = t.joints[model.head_joint()];
  return t;
}

BodyPose place_prediction(const PoseOutput& pred, const SkeletonModel& model, const ShapeParams& beta,
                          const Vec3& tracked_head) {
  const DecodedPrediction d = decode(pred);
  BodyPose pose;
  pose.root_orientation = d.root;
  pose.local_rotations = d.locals;
  pose.root_position = root_from_head(model, tracked_head, d.root, d.locals, beta);
  return pose;
}

LossEvaluation loss_with_gradient(std::span<const double, kOutputDim> output, const LossTarget& target,
                                  const PredictionBody& body, const LossWeights& weights) {
  const SkeletonModel& model = *body.model;
  const PoseOutput pred = PoseOutput::from_vector(output);
  const ShapeParams fk_beta = body.fixed_beta ? *body.fixed_beta : pred.beta;
  const BodyPose pose = place_prediction(pred, model, fk_beta, target.tracked_head);
  const FkResult fk = forward_kinematics(model, pose, fk_beta);

  LossEvaluation out;
  auto& g = out.gradient;

  // Joint positions.
  std::array<Vec3, kNumJoints> g_pos{};
  double dist_sum = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec3 diff = fk.joint_position[j] - target.joints[j];
    dist_sum += norm(diff);
    for (int a = 0; a < 3; ++a) {
      out.parts.pos += std::abs(diff[a]);
      g_pos[j][a] = weights.pos * sign(diff[a]) / kPosElements;
    }
  }
  out.parts.pos /= kPosElements;
  out.mpjpe_m = dist_sum / kNumJoints;

  // The root sits at head - FK_head(origin), so every joint also moves with
  // the head offset of the origin-rooted body.
  Vec3 total;
  for (const auto& v : g_pos) total += v;
  g_pos[model.head_joint()] -= total;
  const FkGradient fg = forward_kinematics_backward(model, pose, fk_beta, fk, g_pos);

  const Rot6D g_root = rot6d_to_matrix_backward(pred.root_orientation, fg.root_orientation);
  for (int i = 0; i < 6; ++i) g[i] += g_root[i];
  for (int j = 0; j < kNumLocalJoints; ++j) {
    const Rot6D gl = rot6d_to_matrix_backward(pred.local_rotations[j], fg.local_rotations[j]);
    for (int i = 0; i < 6; ++i) g[6 + 6 * j + i] += gl[i];
  }
  if (!body.fixed_beta) {
    for (int b = 0; b < kNumBetas; ++b) g[kBetaOffset + b] += fg.beta[b];
  }

  // Root orientation, compared in 6D.
  const Rot6D gt_root = matrix_to_rot6d(target.pose.root_orientation);
  for (int i = 0; i < 6; ++i) {
    const double d = pred.root_orientation[i] - gt_root[i];
    out.parts.ori += std::abs(d);
    g[i] += weights.ori * sign(d) / 6.0;
  }
  out.parts.ori /= 6.0;

  for (int j = 0; j < kNumLocalJoints; ++j) {
    const Rot6D gt = matrix_to_rot6d(target.pose.local_rotations[j]);
    for (int i = 0; i < 6; ++i) {
      const double d = pred.local_rotations[j][i] - gt[i];
      out.parts.rot += std::abs(d);
      g[6 + 6 * j + i] += weights.rot * sign(d) / kRotElements;
    }
  }
  out.parts.rot /= kRotElements;

  for (int b = 0; b < kNumBetas; ++b) {
    out.parts.beta += std::abs(pred.beta[b]);
    g[kBetaOffset + b] += weights.beta * sign(pred.beta[b]);
  }

  out.parts.total = weights.ori * out.parts.ori + weights.rot * out.parts.rot + weights.pos * out.parts.pos +
                    weights.beta * out.parts.beta;
  return out;
}

double loss_pos(const PoseOutput& pred, const BodyPose& gt_pose, const ShapeParams& gt_beta,
                const SkeletonModel& model, const Vec3& tracked_head) {
  LossTarget target = make_loss_target(model, gt_pose, gt_beta);
  target.tracked_head = tracked_head;
  const auto raw = pred.to_vector();
  return loss_with_gradient(raw, target, PredictionBody{&model, std::nullopt}, LossWeights{}).parts.pos;
}

LossBreakdown loss_total(const PoseOutput& pred, const BodyPose& gt_pose, const ShapeParams& gt_beta,
                         const SkeletonModel& model, const LossWeights& weights) {
  const LossTarget target = make_loss_target(model, gt_pose, gt_beta);
  const auto raw = pred.to_vector();
  return loss_with_gradient(raw, target, PredictionBody{&model, std::nullopt}, weights).parts;
}

// -- optimizer -------------------------------------------------------------------------

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
               std::int64_t step, double lr, const AdamHyper& hyper) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "Adam buffers differ in length");
  }
  if (step < 1) throw Error(ErrorCode::kInvalidArgument, "Adam step is 1-based");
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
    const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    params[i] = static_cast<T>(params[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + hyper.epsilon));
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                               std::int64_t, double, const AdamHyper&);
template void adam_step<double>(std::span<double>, std::span<const double>, std::span<double>,
                                std::span<double>, std::int64_t, double, const AdamHyper&);

AdamState AdamState::zeros(const ModelConfig& config) {
  return AdamState{WeightSet<float>(config), WeightSet<float>(config), 0};
}

void adam_step(WeightSet<float>& params, const WeightSet<float>& grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  if (grads.tensor_count() != params.tensor_count() || state.m.tensor_count() != params.tensor_count() ||
      state.v.tensor_count() != params.tensor_count()) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer state does not match the parameters");
  }
  ++state.step;
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    adam_step<float>(params.tensor(i).data, grads.tensor(i).data, state.m.tensor(i).data,
                     state.v.tensor(i).data, state.step, lr, hyper);
  }
}

double lr_schedule(std::int64_t iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw Error(ErrorCode::kInvalidArgument, "negative iteration");
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(iteration / cfg.decay_every));
}

// -- strategies ------------------------------------------------------------------------------

std::string MaskStrategy::describe() const {
  std::ostringstream s;
  switch (kind) {
    case MaskKind::kNone:
      return "none";
    case MaskKind::kRandom:
      s << "random(" << p << ")";
      return s.str();
    case MaskKind::kFov:
      s << "fov(" << fov.alpha_h_deg() << "x" << fov.alpha_v_deg() << ")";
      return s.str();
  }
  return "none";
}

const char* shape_mode_name(ShapeMode mode) {
  switch (mode) {
    case ShapeMode::kMean:
      return "mean";
    case ShapeMode::kCalib:
      return "calib";
    case ShapeMode::kEstimate:
      return "estimate";
  }
  return "estimate";
}

ShapeMode parse_shape_mode(std::string_view name) {
  if (name == "mean") return ShapeMode::kMean;
  if (name == "calib") return ShapeMode::kCalib;
  if (name == "estimate") return ShapeMode::kEstimate;
  throw Error(ErrorCode::kInvalidArgument, "unknown shape strategy '" + std::string(name) + "'");
}

double calibrate_scale(double measured_height, double measured_arm, const SkeletonModel& model) {
  if (!(measured_height > 0.0) || !(measured_arm > 0.0)) {
    throw Error(ErrorCode::kNonPositiveMeasurement, "height and arm length must be positive");
  }
  const BodyMeasurements mean = t_pose_measurements(model, ShapeParams{});
  return 0.5 * (measured_height / mean.height + measured_arm / mean.arm_length);
}

ShapeParams median_shape(std::span<const ShapeParams> betas) {
  if (betas.empty()) throw Error(ErrorCode::kInvalidArgument, "median of zero shapes");
  ShapeParams out{};
  std::vector<double> column(betas.size());
  const std::size_t n = betas.size();
  for (int b = 0; b < kNumBetas; ++b) {
    for (std::size_t i = 0; i < n; ++i) column[i] = betas[i][b];
    std::sort(column.begin(), column.end());
    out[b] = n % 2 == 1 ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
  }
  return out;
}

// -- checkpoints ------------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const WeightSet<float>& weights,
                     const AdamState& optimizer, std::int64_t iteration, const std::string& extra_json) {
  nlohmann::json extra = {{"iteration", iteration}, {"adam_step", optimizer.step}};
  if (!extra_json.empty()) extra["info"] = nlohmann::json::parse(extra_json);
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  tensors.reserve(2 * weights.tensor_count());
  for (std::size_t i = 0; i < weights.tensor_count(); ++i) {
    tensors.emplace_back("adam.m." + weights.name(i), optimizer.m.tensor(i));
    tensors.emplace_back("adam.v." + weights.name(i), optimizer.v.tensor(i));
  }
  save_weights(weights, path, extra.dump(), tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  WeightFile file = load_weight_file(path);
  Checkpoint ck;
  ck.optimizer = AdamState::zeros(file.weights.config());
  std::size_t restored = 0;
  for (auto& [name, t] : file.extra_tensors) {
    const bool is_m = name.starts_with("adam.m.");
    const bool is_v = name.starts_with("adam.v.");
    if (!is_m && !is_v) continue;
    auto& set = is_m ? ck.optimizer.m : ck.optimizer.v;
    const std::string param = name.substr(7);
    if (!set.contains(param) || set[param].rows != t.rows || set[param].cols != t.cols) {
      throw Error(ErrorCode::kConfigMismatch, "checkpoint optimizer tensor " + name + " does not fit the model");
    }
    set[param].data = std::move(t.data);
    ++restored;
  }
  if (restored != 2 * file.weights.tensor_count()) {
    throw Error(ErrorCode::kFormat, path.string() + " is a weight file, not a training checkpoint");
  }
  try {
    const auto extra = nlohmann::json::parse(file.extra_json);
    ck.iteration = extra.at("iteration").get<std::int64_t>();
    ck.optimizer.step = extra.at("adam_step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("checkpoint header: ") + e.what());
  }
  ck.weights = std::move(file.weights);
  return ck;
}

// -- training loop ------------------------------------------------------------------------------

namespace {

struct SequenceData {
  ThreePointTrack track;
  VisibilityMask fov_mask;
  std::vector<LossTarget> targets;
  PredictionBody body;
};

struct Sample {
  std::uint32_t sequence;
  std::uint32_t frame;
};

struct ShardResult {
  WeightSet<float> grad;
  LossBreakdown loss;
  double mpjpe_m = 0.0;
};

std::vector<HandVisibility> mask_window(const VisibilityMask& mask, std::size_t end, int tau) {
  std::vector<HandVisibility> out;
  out.reserve(static_cast<std::size_t>(tau));
  const auto e = static_cast<std::ptrdiff_t>(end);
  for (std::ptrdiff_t i = e - tau + 1; i <= e; ++i) {
    out.push_back(mask[static_cast<std::size_t>(std::max<std::ptrdiff_t>(i, 0))]);
  }
  return out;
}

class EpochOrder {
 public:
  EpochOrder(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t at(std::uint64_t global_index) {
    const std::uint64_t epoch = global_index / n_;
    const auto pos = static_cast<std::size_t>(global_index % n_);
    auto it = cache_.find(epoch);
    if (it == cache_.end()) {
      if (cache_.size() >= 2) cache_.erase(cache_.begin());
      std::vector<std::size_t> perm(n_);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(mix_seed(seed_, kShuffleStream, epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      it = cache_.emplace(epoch, std::move(perm)).first;
    }
    return it->second[pos];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::map<std::uint64_t, std::vector<std::size_t>> cache_;
};

void accumulate(LossBreakdown& into, const LossBreakdown& x, double scale) {
  into.ori += scale * x.ori;
  into.rot += scale * x.rot;
  into.pos += scale * x.pos;
  into.beta += scale * x.beta;
  into.total += scale * x.total;
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainOptions& options,
                  const std::vector<MotionSequence>& dataset, const SkeletonModel& skeleton) {
  model_cfg.validate();
  const TrainConfig& tc = options.train;
  if (tc.batch_size <= 0 || tc.window_stride <= 0 || tc.lr0 <= 0.0 || tc.decay_every <= 0 || tc.threads <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "training configuration values must be positive");
  }

  // Per-sequence tracks, masks, targets and prediction bodies.
  std::deque<SkeletonModel> calibrated;  // stable addresses
  std::vector<SequenceData> seqs;
  std::vector<Sample> samples;
  seqs.reserve(dataset.size());
  for (const auto& seq : dataset) {
    if (seq.frame_count() == 0) continue;
    SequenceData sd;
    sd.track = extract_three_point(seq, skeleton);
    sd.fov_mask = options.mask.kind == MaskKind::kFov ? visibility_mask(options.mask.fov, sd.track)
                                                      : full_visibility(seq.frame_count());
    sd.targets.reserve(seq.frame_count());
    for (const auto& pose : seq.poses) sd.targets.push_back(make_loss_target(skeleton, pose, seq.beta));
    switch (options.shape_mode) {
      case ShapeMode::kMean:
        sd.body = PredictionBody{&skeleton, ShapeParams{}};
        break;
      case ShapeMode::kCalib: {
        const BodyMeasurements m = t_pose_measurements(skeleton, seq.beta);
        calibrated.push_back(skeleton.scaled(calibrate_scale(m.height, m.arm_length, skeleton)));
        sd.body = PredictionBody{&calibrated.back(), ShapeParams{}};
        break;
      }
      case ShapeMode::kEstimate:
        sd.body = PredictionBody{&skeleton, std::nullopt};
        break;
    }
    const auto index = static_cast<std::uint32_t>(seqs.size());
    for (std::size_t f = 0; f < seq.frame_count(); f += static_cast<std::size_t>(tc.window_stride)) {
      samples.push_back(Sample{index, static_cast<std::uint32_t>(f)});
    }
    seqs.push_back(std::move(sd));
  }
  if (samples.empty()) throw Error(ErrorCode::kEmptyDataset, "no training windows");

  TrainResult result;
  std::int64_t start = 0;
  if (options.resume_from) {
    Checkpoint ck = load_checkpoint(*options.resume_from);
    if (!(ck.weights.config() == model_cfg)) {
      throw Error(ErrorCode::kConfigMismatch, "checkpoint was trained with a different model config");
    }
    result.weights = std::move(ck.weights);
    result.optimizer = std::move(ck.optimizer);
    start = ck.iteration;
  } else {
    result.weights = WeightSet<float>::initialized(model_cfg);
    result.optimizer = AdamState::zeros(model_cfg);
  }

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, options.resume_from ? std::ios::app : std::ios::trunc);
    if (!log) throw Error(ErrorCode::kIo, "cannot open log " + options.log_path.string());
  }

  const int tau = model_cfg.tau;
  const int batch = tc.batch_size;
  const int shards = std::min(tc.threads, batch);
  EpochOrder order(samples.size(), tc.seed);
  std::vector<ShardResult> shard_results(static_cast<std::size_t>(shards));
  for (auto& s : shard_results) s.grad = WeightSet<float>(model_cfg);
  std::vector<ForwardWorkspace<float>> workspaces(static_cast<std::size_t>(shards));
  WeightSet<float> grad(model_cfg);
  const auto t0 = std::chrono::steady_clock::now();

  auto run_shard = [&](int shard, std::int64_t it, const std::vector<std::size_t>& picks) {
    ShardResult& sr = shard_results[static_cast<std::size_t>(shard)];
    sr.grad.set_zero();
    sr.loss = {};
    sr.mpjpe_m = 0.0;
    const int lo = batch * shard / shards;
    const int hi = batch * (shard + 1) / shards;
    for (int b = lo; b < hi; ++b) {
      const Sample& s = samples[picks[static_cast<std::size_t>(b)]];
      const SequenceData& sd = seqs[s.sequence];
      const auto frames = window_ending_at(sd.track, s.frame, tau);
      std::vector<HandVisibility> vis;
      if (options.mask.kind == MaskKind::kRandom) {
        const std::uint64_t key = static_cast<std::uint64_t>(it) * static_cast<std::uint64_t>(batch) +
                                  static_cast<std::uint64_t>(b);
        vis = random_mask(options.mask.p, mix_seed(tc.seed, kMaskStream, key), static_cast<std::size_t>(tau));
      } else {
        vis = mask_window(sd.fov_mask, s.frame, tau);
      }
      const FeatureWindow fw = build_window_features(frames, vis, tau, sd.track.fps, model_cfg.feature_mode);
      auto& ws = workspaces[static_cast<std::size_t>(shard)];
      const auto out = forward_raw(result.weights, fw, ws);
      LossEvaluation le = loss_with_gradient(out, sd.targets[s.frame], sd.body, options.loss);
      for (double& g : le.gradient) g /= batch;
      backward_accumulate(result.weights, ws, le.gradient, sr.grad);
      accumulate(sr.loss, le.parts, 1.0 / batch);
      sr.mpjpe_m += le.mpjpe_m / batch;
    }
  };

  std::vector<std::size_t> picks(static_cast<std::size_t>(batch));
  for (std::int64_t it = start; it < tc.iterations; ++it) {
    for (int b = 0; b < batch; ++b) {
      picks[static_cast<std::size_t>(b)] =
          order.at(static_cast<std::uint64_t>(it) * static_cast<std::uint64_t>(batch) + static_cast<std::uint64_t>(b));
    }
    if (shards == 1) {
      run_shard(0, it, picks);
    } else {
      std::vector<std::jthread> pool;
      for (int s = 1; s < shards; ++s) pool.emplace_back(run_shard, s, it, std::cref(picks));
      run_shard(0, it, picks);
    }

    // Fixed-order reduction keeps results independent of thread timing.
    TrainLogRecord rec;
    rec.iteration = it + 1;
    rec.lr = lr_schedule(it, tc);
    if (shards == 1) {
      grad = shard_results[0].grad;
    } else {
      grad.set_zero();
      for (const auto& sr : shard_results) grad.add_scaled(sr.grad, 1.0f);
    }
    for (const auto& sr : shard_results) {
      accumulate(rec.loss, sr.loss, 1.0);
      rec.mpjpe_cm += 100.0 * sr.mpjpe_m;
    }
    adam_step(result.weights, grad, result.optimizer, rec.lr, tc.adam);
    result.log.push_back(rec);
    ++result.iterations_done;

    if (log) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      nlohmann::json line = {{"iteration", rec.iteration}, {"lr", rec.lr},           {"loss", rec.loss.total},
                             {"ori", rec.loss.ori},        {"rot", rec.loss.rot},    {"pos", rec.loss.pos},
                             {"beta", rec.loss.beta},      {"mpjpe_cm", rec.mpjpe_cm}, {"wall_time_s", wall}};
      log << line.dump() << '\n';
    }
    if (!options.checkpoint_path.empty() && tc.checkpoint_every > 0 && (it + 1) % tc.checkpoint_every == 0) {
      save_checkpoint(options.checkpoint_path, result.weights, result.optimizer, it + 1);
    }
    if (options.on_iteration && !options.on_iteration(rec)) break;
  }
  if (!options.checkpoint_path.empty()) {
    save_checkpoint(options.checkpoint_path, result.weights, result.optimizer,
                    start + result.iterations_done);
  }
  return result;
}

}  // namespace egopose
