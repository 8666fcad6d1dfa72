#include "egopose/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "egopose/errors.hpp"

namespace egopose {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": " + std::to_string(a) + " vs " +
                                               std::to_string(b) + " frames");
  }
}

}  // namespace

double mpjpe(std::span<const JointPositions> pred, std::span<const JointPositions> gt) {
  require_same_length(pred.size(), gt.size(), "mpjpe");
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    for (int j = 0; j < kNumJoints; ++j) sum += norm(pred[f][j] - gt[f][j]);
  }
  return 100.0 * sum / (static_cast<double>(pred.size()) * kNumJoints);
}

double mpjve(std::span<const JointPositions> pred, std::span<const JointPositions> gt, double fps) {
  require_same_length(pred.size(), gt.size(), "mpjve");
  if (pred.size() < 2) throw Error(ErrorCode::kTooShort, "velocity error needs at least two frames");
  double sum = 0.0;
  for (std::size_t f = 1; f < pred.size(); ++f) {
    for (int j = 0; j < kNumJoints; ++j) {
      const Vec3 vp = (pred[f][j] - pred[f - 1][j]) * fps;
      const Vec3 vg = (gt[f][j] - gt[f - 1][j]) * fps;
      sum += norm(vp - vg);
    }
  }
  return 100.0 * sum / (static_cast<double>(pred.size() - 1) * kNumJoints);
}

double mve(const VertexFrames& pred, const VertexFrames& gt) {
  require_same_length(pred.size(), gt.size(), "mve");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    require_same_length(pred[f].size(), gt[f].size(), "mve vertices");
    for (std::size_t v = 0; v < pred[f].size(); ++v) sum += norm(pred[f][v] - gt[f][v]);
    count += pred[f].size();
  }
  return count == 0 ? 0.0 : 100.0 * sum / static_cast<double>(count);
}

double ground_penetration(const VertexFrames& frames) {
  double depth = 0.0;
  std::size_t count = 0;
  for (const auto& frame : frames) {
    for (const auto& v : frame) {
      if (v.z < 0.0) {
        depth += -v.z;
        ++count;
      }
    }
  }
  return count == 0 ? 0.0 : 100.0 * depth / static_cast<double>(count);
}

double floating_feet(const VertexFrames& frames) {
  double height = 0.0;
  std::size_t count = 0;
  for (const auto& frame : frames) {
    if (frame.empty()) continue;
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& v : frame) lowest = std::min(lowest, v.z);
    if (lowest < 0.0) continue;
    height += lowest;
    ++count;
  }
  return count == 0 ? 0.0 : 100.0 * height / static_cast<double>(count);
}

BodyDimensionErrors body_dimension_errors(const SkeletonModel& pred_model, const ShapeParams& pred_beta,
                                          const SkeletonModel& gt_model, const ShapeParams& gt_beta) {
  const BodyMeasurements p = t_pose_measurements(pred_model, pred_beta);
  const BodyMeasurements g = t_pose_measurements(gt_model, gt_beta);
  return {100.0 * std::abs(p.height - g.height), 100.0 * std::abs(p.arm_length - g.arm_length)};
}

BodyDimensionErrors body_dimension_errors(const ShapeParams& pred_beta, const ShapeParams& gt_beta,
                                          const SkeletonModel& model) {
  return body_dimension_errors(model, pred_beta, model, gt_beta);
}

// -- pipeline ----------------------------------------------------------------------------

SequencePrediction predict_sequence(const WeightSet<float>& weights, const MotionSequence& seq,
                                    const SkeletonModel& skeleton, const EvalOptions& options) {
  const ModelConfig& cfg = weights.config();
  ThreePointTrack track = extract_three_point(seq, skeleton);
  switch (options.visibility.kind) {
    case MaskKind::kNone:
      break;
    case MaskKind::kRandom:
      track = with_visibility(std::move(track), random_mask(options.visibility.p, options.seed, track.frame_count()));
      break;
    case MaskKind::kFov:
      track = with_visibility(std::move(track), visibility_mask(options.visibility.fov, track));
      break;
  }

  SequencePrediction out;
  std::vector<PoseOutput> raw;
  raw.reserve(track.frame_count());
  ForwardWorkspace<float> ws;
  for (std::size_t f = 0; f < track.frame_count(); ++f) {
    const auto frames = window_ending_at(track, f, cfg.tau);
    const FeatureWindow fw = build_window_features(frames, cfg.tau, track.fps, cfg.feature_mode);
    raw.push_back(PoseOutput::from_vector(forward_raw(weights, fw, ws)));
    out.raw_betas.push_back(raw.back().beta);
  }

  switch (options.shape_mode) {
    case ShapeMode::kMean:
      break;
    case ShapeMode::kCalib: {
      const BodyMeasurements m = t_pose_measurements(skeleton, seq.beta);
      out.body_scale = calibrate_scale(m.height, m.arm_length, skeleton);
      break;
    }
    case ShapeMode::kEstimate: {
      const auto n = std::min<std::size_t>(out.raw_betas.size(),
                                           static_cast<std::size_t>(std::max(1, options.median_frames)));
      if (n > 0) out.beta = median_shape(std::span<const ShapeParams>(out.raw_betas.data(), n));
      break;
    }
  }

  const SkeletonModel body = skeleton.scaled(out.body_scale);
  out.poses.reserve(raw.size());
  for (std::size_t f = 0; f < raw.size(); ++f) {
    out.poses.push_back(place_prediction(raw[f], body, out.beta, track.frames[f].head.position));
  }
  return out;
}

namespace {

SequenceReport evaluate_sequence(const WeightSet<float>& weights, const MotionSequence& seq,
                                 const SkeletonModel& skeleton, const EvalOptions& options) {
  const SequencePrediction pred = predict_sequence(weights, seq, skeleton, options);
  const SkeletonModel body = skeleton.scaled(pred.body_scale);

  std::vector<JointPositions> pj, gj;
  VertexFrames pv, gv;
  pj.reserve(seq.frame_count());
  gj.reserve(seq.frame_count());
  for (std::size_t f = 0; f < seq.frame_count(); ++f) {
    const FkResult pf = forward_kinematics(body, pred.poses[f], pred.beta);
    const FkResult gf = forward_kinematics(skeleton, seq.poses[f], seq.beta);
    pj.push_back(pf.joint_position);
    gj.push_back(gf.joint_position);
    pv.push_back(proxy_vertices(body, pf, pred.beta));
    gv.push_back(proxy_vertices(skeleton, gf, seq.beta));
  }

  SequenceReport r;
  r.sequence_id = seq.sequence_id;
  r.subject_id = seq.subject_id;
  r.frames = seq.frame_count();
  r.metrics.mpjpe_cm = mpjpe(pj, gj);
  r.metrics.mpjve_cm_s = pj.size() >= 2 ? mpjve(pj, gj, seq.fps) : 0.0;
  r.metrics.mve_cm = mve(pv, gv);
  const BodyDimensionErrors dims = body_dimension_errors(body, pred.beta, skeleton, seq.beta);
  r.metrics.height_err_cm = dims.height_cm;
  r.metrics.arm_err_cm = dims.arm_cm;
  r.metrics.gp_cm = ground_penetration(pv);
  r.metrics.ff_cm = floating_feet(pv);
  return r;
}

Metrics aggregate(const std::vector<SequenceReport>& seqs) {
  Metrics m;
  double w = 0.0;
  double wv = 0.0;
  for (const auto& s : seqs) {
    const auto f = static_cast<double>(s.frames);
    const double fv = s.frames > 1 ? f - 1.0 : 0.0;
    m.mpjpe_cm += f * s.metrics.mpjpe_cm;
    m.mpjve_cm_s += fv * s.metrics.mpjve_cm_s;
    m.mve_cm += f * s.metrics.mve_cm;
    m.height_err_cm += f * s.metrics.height_err_cm;
    m.arm_err_cm += f * s.metrics.arm_err_cm;
    m.gp_cm += f * s.metrics.gp_cm;
    m.ff_cm += f * s.metrics.ff_cm;
    w += f;
    wv += fv;
  }
  if (w > 0.0) {
    m.mpjpe_cm /= w;
    m.mve_cm /= w;
    m.height_err_cm /= w;
    m.arm_err_cm /= w;
    m.gp_cm /= w;
    m.ff_cm /= w;
  }
  if (wv > 0.0) m.mpjve_cm_s /= wv;
  return m;
}

std::string config_echo(const WeightSet<float>& weights, const EvalOptions& options) {
  nlohmann::json j = {{"report_version", kReportVersion},
                      {"model", nlohmann::json::parse(weights.config().to_json_text())},
                      {"visibility", options.visibility.describe()},
                      {"shape_strategy", shape_mode_name(options.shape_mode)},
                      {"median_frames", options.median_frames},
                      {"seed", options.seed},
                      {"aggregation", "frame-weighted"}};
  return j.dump();
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"mpjpe_cm", m.mpjpe_cm}, {"mpjve_cm_s", m.mpjve_cm_s}, {"mve_cm", m.mve_cm},
          {"height_err_cm", m.height_err_cm}, {"arm_err_cm", m.arm_err_cm}, {"gp_cm", m.gp_cm},
          {"ff_cm", m.ff_cm}};
}

constexpr const char* kMetricColumns = "mpjpe_cm,mpjve_cm_s,mve_cm,height_err_cm,arm_err_cm,gp_cm,ff_cm";

void write_metrics(std::ostream& out, const Metrics& m) {
  out << m.mpjpe_cm << ',' << m.mpjve_cm_s << ',' << m.mve_cm << ',' << m.height_err_cm << ',' << m.arm_err_cm
      << ',' << m.gp_cm << ',' << m.ff_cm;
}

}  // namespace

EvalReport evaluate(const WeightSet<float>& weights, const std::vector<MotionSequence>& dataset,
                    const SkeletonModel& skeleton, const EvalOptions& options) {
  if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "nothing to evaluate");
  EvalReport report;
  report.config_json = config_echo(weights, options);
  for (const auto& seq : dataset) {
    report.sequences.push_back(evaluate_sequence(weights, seq, skeleton, options));
    report.total_frames += seq.frame_count();
  }
  report.aggregate = aggregate(report.sequences);
  return report;
}

std::vector<OffsetRow> offset_sweep(const WeightSet<float>& weights, const std::vector<MotionSequence>& dataset,
                                    std::span<const double> offsets_m, const SkeletonModel& skeleton,
                                    const EvalOptions& options) {
  std::vector<OffsetRow> rows;
  for (double d : offsets_m) {
    std::vector<MotionSequence> shifted;
    shifted.reserve(dataset.size());
    for (const auto& seq : dataset) shifted.push_back(apply_offset(seq, Vec3{d, 0.0, 0.0}));
    rows.push_back(OffsetRow{d, evaluate(weights, shifted, skeleton, options)});
  }
  return rows;
}

std::vector<FovTableRow> fov_strategy_compare(const StrategyModels& models,
                                              const std::vector<MotionSequence>& dataset,
                                              std::span<const double> fovs_deg, const SkeletonModel& skeleton,
                                              const EvalOptions& options) {
  if (models.full == nullptr) throw Error(ErrorCode::kMissingWeights, "no full-visibility weights");
  if (models.random == nullptr) throw Error(ErrorCode::kMissingWeights, "no random-masking weights");
  for (double fov : fovs_deg) {
    const auto it = models.fov.find(fov);
    if (it == models.fov.end() || it->second == nullptr) {
      std::ostringstream msg;
      msg << "no FoV-trained weights for " << fov << " degrees";
      throw Error(ErrorCode::kMissingWeights, msg.str());
    }
  }
  std::vector<FovTableRow> rows;
  const std::pair<const char*, const WeightSet<float>*> fixed[] = {{"full", models.full}, {"random", models.random}};
  for (double fov : fovs_deg) {
    EvalOptions eo = options;
    eo.visibility = MaskStrategy::field_of_view(FovConfig(fov));
    auto run = [&](const char* name, const WeightSet<float>& w) {
      const EvalReport r = evaluate(w, dataset, skeleton, eo);
      rows.push_back(FovTableRow{name, fov, r.aggregate.mpjpe_cm, r.aggregate.mpjve_cm_s});
    };
    for (const auto& [name, w] : fixed) run(name, *w);
    run("fov", *models.fov.at(fov));
  }
  return rows;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "# egopose report v" << kReportVersion << ", aggregate row is frame-weighted\n";
  out << "sequence_id,subject_id,frames," << kMetricColumns << '\n';
  for (const auto& s : report.sequences) {
    out << s.sequence_id << ',' << s.subject_id << ',' << s.frames << ',';
    write_metrics(out, s.metrics);
    out << '\n';
  }
  out << "ALL,," << report.total_frames << ',';
  write_metrics(out, report.aggregate);
  out << '\n';
  return out.str();
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["report_version"] = kReportVersion;
  j["config"] = report.config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(report.config_json);
  j["total_frames"] = report.total_frames;
  j["aggregate"] = metrics_json(report.aggregate);
  auto& seqs = j["sequences"] = nlohmann::json::array();
  for (const auto& s : report.sequences) {
    seqs.push_back({{"sequence_id", s.sequence_id},
                    {"subject_id", s.subject_id},
                    {"frames", s.frames},
                    {"metrics", metrics_json(s.metrics)}});
  }
  return j.dump(2);
}

std::string offset_table_csv(const std::vector<OffsetRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "# egopose offset sweep v" << kReportVersion << ", offsets along world x\n";
  out << "offset_m," << kMetricColumns << '\n';
  for (const auto& r : rows) {
    out << r.offset_m << ',';
    write_metrics(out, r.report.aggregate);
    out << '\n';
  }
  return out.str();
}

std::string fov_table_csv(const std::vector<FovTableRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "# egopose fov strategy table v" << kReportVersion << '\n';
  out << "strategy,fov_deg,mpjpe_cm,mpjve_cm_s\n";
  for (const auto& r : rows) out << r.strategy << ',' << r.fov_deg << ',' << r.mpjpe_cm << ',' << r.mpjve_cm_s << '\n';
  return out.str();
}

}  // namespace egopose
