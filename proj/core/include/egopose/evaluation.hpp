// Pose, shape and ground-contact metrics plus the evaluation harnesses.
//
// Units: positions in cm, velocities in cm/s. Sequence aggregates are
// frame-weighted (MPJVE weights by frame-1, since the first frame has no
// velocity).
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "egopose/training.hpp"

namespace egopose {

inline constexpr int kReportVersion = 1;

using VertexFrames = std::vector<std::vector<Vec3>>;

/// Throws kShapeMismatch for different frame counts.
double mpjpe(std::span<const JointPositions> pred, std::span<const JointPositions> gt);

/// Forward differences times fps; the first frame is excluded. Throws
/// kShapeMismatch, or kTooShort below two frames.
double mpjve(std::span<const JointPositions> pred, std::span<const JointPositions> gt, double fps);

double mve(const VertexFrames& pred, const VertexFrames& gt);

/// Mean depth of every below-ground (z < 0) vertex, pooled over frames; 0 if none.
double ground_penetration(const VertexFrames& frames);

/// Mean over frames with no vertex below ground of the lowest vertex height; 0 if none.
double floating_feet(const VertexFrames& frames);

struct BodyDimensionErrors {
  double height_cm = 0.0;
  double arm_cm = 0.0;
};

BodyDimensionErrors body_dimension_errors(const ShapeParams& pred_beta, const ShapeParams& gt_beta,
                                          const SkeletonModel& model);
BodyDimensionErrors body_dimension_errors(const SkeletonModel& pred_model, const ShapeParams& pred_beta,
                                          const SkeletonModel& gt_model, const ShapeParams& gt_beta);

struct Metrics {
  double mpjpe_cm = 0.0;
  double mpjve_cm_s = 0.0;
  double mve_cm = 0.0;
  double height_err_cm = 0.0;
  double arm_err_cm = 0.0;
  double gp_cm = 0.0;
  double ff_cm = 0.0;
};

struct SequenceReport {
  std::string sequence_id;
  std::string subject_id;
  std::size_t frames = 0;
  Metrics metrics;
};

struct EvalReport {
  std::vector<SequenceReport> sequences;
  Metrics aggregate;
  std::size_t total_frames = 0;
  std::string config_json;
};

struct EvalOptions {
  MaskStrategy visibility;  // how hands drop out at test time
  ShapeMode shape_mode = ShapeMode::kEstimate;
  int median_frames = 60;  // first N predictions feeding the median shape
  std::uint64_t seed = 0;  // random visibility only
};

/// Per-frame prediction for one sequence, placed under the tracked head.
struct SequencePrediction {
  std::vector<BodyPose> poses;
  std::vector<ShapeParams> raw_betas;
  ShapeParams beta{};       // shape used for the whole sequence
  double body_scale = 1.0;  // uniform skeleton scale (calibration)
};

SequencePrediction predict_sequence(const WeightSet<float>& weights, const MotionSequence& seq,
                                    const SkeletonModel& skeleton, const EvalOptions& options);

EvalReport evaluate(const WeightSet<float>& weights, const std::vector<MotionSequence>& dataset,
                    const SkeletonModel& skeleton, const EvalOptions& options);

struct OffsetRow {
  double offset_m = 0.0;
  EvalReport report;
};

/// Offsets are applied along world x to the ground truth and the tracking.
std::vector<OffsetRow> offset_sweep(const WeightSet<float>& weights, const std::vector<MotionSequence>& dataset,
                                    std::span<const double> offsets_m, const SkeletonModel& skeleton,
                                    const EvalOptions& options);

struct StrategyModels {
  const WeightSet<float>* full = nullptr;
  const WeightSet<float>* random = nullptr;
  /// Keyed by training field of view in degrees; each evaluated FoV needs an entry.
  std::map<double, const WeightSet<float>*> fov;
};

struct FovTableRow {
  std::string strategy;  // full | random | fov
  double fov_deg = 0.0;
  double mpjpe_cm = 0.0;
  double mpjve_cm_s = 0.0;
};

/// Every strategy evaluated at every FoV. Throws kMissingWeights.
std::vector<FovTableRow> fov_strategy_compare(const StrategyModels& models,
                                              const std::vector<MotionSequence>& dataset,
                                              std::span<const double> fovs_deg, const SkeletonModel& skeleton,
                                              const EvalOptions& options);

std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);
std::string offset_table_csv(const std::vector<OffsetRow>& rows);
std::string fov_table_csv(const std::vector<FovTableRow>& rows);

}  // namespace egopose
