// Losses, optimizer, and the training loop.
//
// Total loss for one window (prediction = last frame):
//   lambda_ori * L1(root 6D) + lambda_rot * L1(local 6Ds)
//   + lambda_pos * L1(FK joint positions) + lambda_beta * |beta|_1
// L1 terms are element means; the beta term is a plain sum. The predicted
// root position is recovered from the tracked head, so L_pos only sees
// errors the network can actually change.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egopose/fov.hpp"
#include "egopose/network.hpp"

namespace egopose {

struct LossWeights {
  double ori = 0.05;
  double rot = 1.0;
  double pos = 1.0;
  double beta = 0.01;
};

struct LossBreakdown {
  double ori = 0.0;   // unweighted components
  double rot = 0.0;
  double pos = 0.0;
  double beta = 0.0;
  double total = 0.0;  // weighted sum
  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// Everything the loss needs to know about the ground truth of one frame.
struct LossTarget {
  BodyPose pose;
  ShapeParams beta{};
  JointPositions joints{};  // FK(pose, beta)
  Vec3 tracked_head;
};

LossTarget make_loss_target(const SkeletonModel& model, const BodyPose& pose, const ShapeParams& beta);

/// Body used to place the prediction. With fixed_beta set, predicted beta is
/// ignored by FK (it still pays the L1 term).
struct PredictionBody {
  const SkeletonModel* model = nullptr;
  std::optional<ShapeParams> fixed_beta;
};

/// Pose decoded from a prediction with its root placed under the tracked head.
BodyPose place_prediction(const PoseOutput& pred, const SkeletonModel& model, const ShapeParams& beta,
                          const Vec3& tracked_head);

double loss_pos(const PoseOutput& pred, const BodyPose& gt_pose, const ShapeParams& gt_beta,
                const SkeletonModel& model, const Vec3& tracked_head);

LossBreakdown loss_total(const PoseOutput& pred, const BodyPose& gt_pose, const ShapeParams& gt_beta,
                         const SkeletonModel& model, const LossWeights& weights);

struct LossEvaluation {
  LossBreakdown parts;
  std::array<double, kOutputDim> gradient{};  // d total / d raw outputs
  double mpjpe_m = 0.0;                       // mean joint distance of this sample
};

LossEvaluation loss_with_gradient(std::span<const double, kOutputDim> output, const LossTarget& target,
                                  const PredictionBody& body, const LossWeights& weights);

// -- optimizer -----------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update with bias correction; step is 1-based. Throws
/// kShapeMismatch when the spans differ in length.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
               std::int64_t step, double lr, const AdamHyper& hyper = {});

struct AdamState {
  WeightSet<float> m;
  WeightSet<float> v;
  std::int64_t step = 0;

  static AdamState zeros(const ModelConfig& config);
};

void adam_step(WeightSet<float>& params, const WeightSet<float>& grads, AdamState& state, double lr,
               const AdamHyper& hyper = {});

struct TrainConfig {
  int batch_size = 256;
  double lr0 = 1e-4;
  double decay_factor = 0.5;
  std::int64_t decay_every = 20000;
  std::int64_t iterations = 100000;
  std::uint64_t seed = 0;
  int window_stride = 1;
  std::int64_t checkpoint_every = 0;  // 0 = only at the end (if a path is set)
  int threads = 1;
  AdamHyper adam;
};

double lr_schedule(std::int64_t iteration, const TrainConfig& cfg);

// -- training loop ---------------------------------------------------------------

enum class MaskKind { kNone, kRandom, kFov };

struct MaskStrategy {
  MaskKind kind = MaskKind::kNone;
  double p = 0.0;                      // kRandom
  FovConfig fov = FovConfig(180.0);   // kFov

  static MaskStrategy none() { return {}; }
  static MaskStrategy random(double p) { return {MaskKind::kRandom, p, FovConfig(180.0)}; }
  static MaskStrategy field_of_view(const FovConfig& cfg) { return {MaskKind::kFov, 0.0, cfg}; }

  std::string describe() const;
};

/// mean: every body is the default skeleton with beta = 0.
/// calib: default skeleton uniformly scaled by the subject's T-pose calibration.
/// estimate: predicted beta drives FK (median over the first frames at test time).
enum class ShapeMode { kMean, kCalib, kEstimate };

const char* shape_mode_name(ShapeMode mode);
ShapeMode parse_shape_mode(std::string_view name);

struct TrainLogRecord {
  std::int64_t iteration = 0;  // 1-based
  double lr = 0.0;
  LossBreakdown loss;
  double mpjpe_cm = 0.0;  // batch mean
  friend bool operator==(const TrainLogRecord&, const TrainLogRecord&) = default;
};

struct TrainOptions {
  TrainConfig train;
  LossWeights loss;
  MaskStrategy mask;
  ShapeMode shape_mode = ShapeMode::kEstimate;
  std::filesystem::path checkpoint_path;  // empty = no checkpoints
  std::filesystem::path log_path;         // empty = no JSONL log
  std::optional<std::filesystem::path> resume_from;
  /// Called after every iteration; return false to stop early.
  std::function<bool(const TrainLogRecord&)> on_iteration;
};

struct TrainResult {
  WeightSet<float> weights;
  AdamState optimizer;
  std::vector<TrainLogRecord> log;  // iterations run by this call
  std::int64_t iterations_done = 0;
};

/// Throws kEmptyDataset when no sequence yields a window.
TrainResult train(const ModelConfig& model_cfg, const TrainOptions& options,
                  const std::vector<MotionSequence>& dataset,
                  const SkeletonModel& skeleton = SkeletonModel::default_model());

void save_checkpoint(const std::filesystem::path& path, const WeightSet<float>& weights,
                     const AdamState& optimizer, std::int64_t iteration, const std::string& extra_json = {});

struct Checkpoint {
  WeightSet<float> weights;
  AdamState optimizer;
  std::int64_t iteration = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// -- shape strategies --------------------------------------------------------------

/// Mean of the height and arm-length ratios against the mean shape. Throws
/// kNonPositiveMeasurement.
double calibrate_scale(double measured_height, double measured_arm, const SkeletonModel& model);

/// Coordinate-wise median; even counts average the two middle values.
ShapeParams median_shape(std::span<const ShapeParams> betas);

}  // namespace egopose
