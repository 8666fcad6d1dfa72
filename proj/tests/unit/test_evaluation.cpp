#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "egopose/errors.hpp"
#include "egopose/evaluation.hpp"
#include "oracles.hpp"

using namespace egopose;
using egopose::oracle::ff_brute_force;
using egopose::oracle::gp_brute_force;

namespace {

const SkeletonModel& model() { return SkeletonModel::default_model(); }

std::vector<JointPositions> joints_track(std::size_t frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<JointPositions> out(frames);
  for (auto& f : out) {
    for (auto& p : f) p = {u(rng), u(rng), u(rng)};
  }
  return out;
}

VertexFrames random_cloud(std::mt19937_64& rng, std::size_t frames, std::size_t verts) {
  std::uniform_real_distribution<double> u(-0.05, 0.3);
  std::bernoulli_distribution lift(0.4);
  VertexFrames out(frames, std::vector<Vec3>(verts));
  for (auto& frame : out) {
    const double shift = lift(rng) ? 0.06 : 0.0;  // some frames float clear of the ground
    for (auto& v : frame) v = {u(rng), u(rng), u(rng) + shift};
  }
  return out;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.tau = 8;
  c.embed_dim = 4;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_hidden = 8;
  return c;
}

std::vector<MotionSequence> small_suite() {
  std::vector<MotionSequence> out;
  out.push_back(synthesize_sequence(model(), 1, MotionProfile::kWalk, 1.0, 60.0, shape_for_height(model(), 1.6)));
  out.push_back(synthesize_sequence(model(), 2, MotionProfile::kReach, 1.5, 30.0, shape_for_height(model(), 1.9)));
  return out;
}

}  // namespace

TEST(Mpjpe, Examples) {
  const auto gt = joints_track(5, 1);
  EXPECT_EQ(mpjpe(gt, gt), 0.0);
  auto shifted = gt;
  for (auto& f : shifted) {
    for (auto& p : f) p.x += 0.01;
  }
  EXPECT_NEAR(mpjpe(shifted, gt), 1.0, 1e-12);
  auto one = gt;
  one[3][7].y += 0.22;
  EXPECT_NEAR(mpjpe(one, gt), 22.0 / (22.0 * 5.0), 1e-12);
  const auto shorter = joints_track(4, 1);
  try {
    mpjpe(shorter, gt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Mpjve, Examples) {
  const auto gt = joints_track(6, 2);
  EXPECT_EQ(mpjve(gt, gt, 60.0), 0.0);
  auto offset = gt;
  for (auto& f : offset) {
    for (auto& p : f) p += Vec3{0.3, -0.1, 0.2};
  }
  EXPECT_NEAR(mpjve(offset, gt, 60.0), 0.0, 1e-9);

  std::vector<JointPositions> still(10);
  auto drift = still;
  for (std::size_t t = 0; t < drift.size(); ++t) {
    for (auto& p : drift[t]) p.x = 0.01 * static_cast<double>(t);
  }
  EXPECT_NEAR(mpjve(drift, still, 60.0), 60.0, 1e-9);
  EXPECT_THROW(mpjve(std::span(still).first(1), std::span(still).first(1), 60.0), Error);
}

TEST(Mve, Examples) {
  std::mt19937_64 rng(3);
  const VertexFrames gt = random_cloud(rng, 4, 10);
  EXPECT_EQ(mve(gt, gt), 0.0);
  VertexFrames moved = gt;
  for (auto& f : moved) {
    for (auto& v : f) v.z += 0.02;
  }
  EXPECT_NEAR(mve(moved, gt), 2.0, 1e-12);
  VertexFrames one = gt;
  one[2][5].x += 0.4;
  EXPECT_NEAR(mve(one, gt), 40.0 / (10 * 4), 1e-12);
}

TEST(GroundPenetration, Examples) {
  EXPECT_EQ(ground_penetration({{{0, 0, 0.1}, {0, 0, 0.0}}}), 0.0);
  EXPECT_NEAR(ground_penetration({{{0, 0, -0.01}, {0, 0, -0.03}, {0, 0, 0.5}}}), 2.0, 1e-12);
  // three penetrating vertices across two frames, one clean frame
  const VertexFrames mixed{{{0, 0, -0.02}, {0, 0, 0.1}}, {{0, 0, 0.3}}, {{0, 0, -0.04}, {0, 0, -0.06}}};
  EXPECT_NEAR(ground_penetration(mixed), 4.0, 1e-12);
}

TEST(FloatingFeet, Examples) {
  EXPECT_EQ(floating_feet({{{0, 0, 0.0}, {0, 0, 1.0}}, {{0, 0, 0.0}}}), 0.0);
  EXPECT_NEAR(floating_feet({{{0, 0, 0.05}, {0, 0, 1.0}}, {{0, 0, 0.05}}}), 5.0, 1e-12);
  // the penetrating frame is dropped, not averaged in
  EXPECT_NEAR(floating_feet({{{0, 0, 0.02}}, {{0, 0, -0.5}, {0, 0, 0.9}}, {{0, 0, 0.04}}}), 3.0, 1e-12);
  EXPECT_EQ(floating_feet({{{0, 0, -0.1}}}), 0.0);
}

TEST(GroundMetrics, MatchBruteForceOnRandomClouds) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const VertexFrames cloud = random_cloud(rng, 1 + trial % 7, 3 + trial % 11);
    const double gp = gp_brute_force(cloud), ff = ff_brute_force(cloud);
    EXPECT_NEAR(ground_penetration(cloud), gp, 1e-12 * std::max(1.0, gp));
    EXPECT_NEAR(floating_feet(cloud), ff, 1e-12 * std::max(1.0, ff));
  }
}

TEST(GroundMetrics, FrameContributesToAtMostOne) {
  // a frame touching z < 0 cannot be a floating frame and vice versa
  const VertexFrames pen{{{0, 0, -0.01}, {0, 0, 0.2}}};
  EXPECT_GT(ground_penetration(pen), 0.0);
  EXPECT_EQ(floating_feet(pen), 0.0);
  const VertexFrames flo{{{0, 0, 0.01}, {0, 0, 0.2}}};
  EXPECT_EQ(ground_penetration(flo), 0.0);
  EXPECT_GT(floating_feet(flo), 0.0);
}

TEST(BodyDimensions, Examples) {
  const auto zero = body_dimension_errors(ShapeParams{}, ShapeParams{}, model());
  EXPECT_EQ(zero.height_cm, 0.0);
  EXPECT_EQ(zero.arm_cm, 0.0);
  // beta[0] adds 5% of every offset per unit: 0.5 units change the 1.70 m height by 4.25 cm
  ShapeParams b{};
  b[0] = 0.5;
  const auto e = body_dimension_errors(b, ShapeParams{}, model());
  EXPECT_NEAR(e.height_cm, 4.25, 1e-9);
  EXPECT_NEAR(e.arm_cm, 0.51 * 0.025 * 100.0, 1e-9);
  ShapeParams inactive{};
  for (int k = 3; k < kNumBetas; ++k) inactive[k] = 3.0;
  const auto none = body_dimension_errors(inactive, ShapeParams{}, model());
  EXPECT_EQ(none.height_cm, 0.0);
  EXPECT_EQ(none.arm_cm, 0.0);
}

TEST(Evaluate, ReportShapeAndWeighting) {
  const auto suite = small_suite();
  const WeightSet<float> w = WeightSet<float>::initialized(tiny_model());
  EvalOptions eo;
  eo.shape_mode = ShapeMode::kEstimate;
  const EvalReport r = evaluate(w, suite, model(), eo);
  ASSERT_EQ(r.sequences.size(), 2u);
  EXPECT_EQ(r.total_frames, 60u + 45u);
  const double expected = (60 * r.sequences[0].metrics.mpjpe_cm + 45 * r.sequences[1].metrics.mpjpe_cm) / 105.0;
  EXPECT_NEAR(r.aggregate.mpjpe_cm, expected, 1e-12);
  const double expected_v = (59 * r.sequences[0].metrics.mpjve_cm_s + 44 * r.sequences[1].metrics.mpjve_cm_s) / 103.0;
  EXPECT_NEAR(r.aggregate.mpjve_cm_s, expected_v, 1e-12);
  for (const auto& s : r.sequences) {
    EXPECT_GE(s.metrics.mpjpe_cm, 0.0);
    EXPECT_GE(s.metrics.gp_cm, 0.0);
    EXPECT_GE(s.metrics.ff_cm, 0.0);
  }
  EXPECT_THROW(evaluate(w, {}, model(), eo), Error);
}

TEST(Evaluate, PredictionHeadMatchesTrackedHead) {
  const auto suite = small_suite();
  const WeightSet<float> w = WeightSet<float>::initialized(tiny_model());
  EvalOptions eo;
  eo.shape_mode = ShapeMode::kCalib;
  const SequencePrediction p = predict_sequence(w, suite[1], model(), eo);
  const SkeletonModel body = model().scaled(p.body_scale);
  const ThreePointTrack track = extract_three_point(suite[1], model());
  for (std::size_t f = 0; f < p.poses.size(); f += 7) {
    const Vec3 head = forward_kinematics(body, p.poses[f], p.beta).joint_position[model().head_joint()];
    EXPECT_LT(norm(head - track.frames[f].head.position), 1e-9);
  }
  EXPECT_GT(p.body_scale, 1.0);
}

TEST(Evaluate, MedianShapeUsesFirstFrames) {
  const auto suite = small_suite();
  const WeightSet<float> w = WeightSet<float>::initialized(tiny_model());
  EvalOptions eo;
  eo.shape_mode = ShapeMode::kEstimate;
  eo.median_frames = 10;
  const SequencePrediction p = predict_sequence(w, suite[0], model(), eo);
  EXPECT_EQ(p.beta, median_shape(std::span(p.raw_betas).first(10)));
}

TEST(OffsetSweep, RowsAndZeroRow) {
  const auto suite = small_suite();
  const WeightSet<float> w = WeightSet<float>::initialized(tiny_model());
  EvalOptions eo;
  const std::vector<double> offsets{0, 2, 5, 10, 50};
  const auto rows = offset_sweep(w, suite, offsets, model(), eo);
  ASSERT_EQ(rows.size(), 5u);
  const EvalReport plain = evaluate(w, suite, model(), eo);
  EXPECT_EQ(rows[0].report.aggregate.mpjpe_cm, plain.aggregate.mpjpe_cm);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.report.aggregate.mpjpe_cm, plain.aggregate.mpjpe_cm, 1e-6);
    EXPECT_NEAR(r.report.aggregate.mpjve_cm_s, plain.aggregate.mpjve_cm_s, 1e-6);
    EXPECT_NEAR(r.report.aggregate.mve_cm, plain.aggregate.mve_cm, 1e-6);
  }
  const std::string csv = offset_table_csv(rows);
  std::istringstream in(csv);
  std::string line;
  int data_rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("offset_m", 0) != 0) ++data_rows;
  }
  EXPECT_EQ(data_rows, 5);
}

TEST(FovCompare, MissingWeights) {
  const auto suite = small_suite();
  const WeightSet<float> w = WeightSet<float>::initialized(tiny_model());
  const std::vector<double> fovs{180, 120, 90};
  StrategyModels models;
  models.full = &w;
  models.random = &w;
  models.fov[180] = &w;
  models.fov[120] = &w;
  try {
    fov_strategy_compare(models, suite, fovs, model(), EvalOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingWeights);
  }
  models.fov[90] = &w;
  const auto rows = fov_strategy_compare(models, suite, fovs, model(), EvalOptions{});
  EXPECT_EQ(rows.size(), 9u);
  const auto again = fov_strategy_compare(models, suite, fovs, model(), EvalOptions{});
  EXPECT_EQ(fov_table_csv(rows), fov_table_csv(again));
  StrategyModels empty;
  EXPECT_THROW(fov_strategy_compare(empty, suite, fovs, model(), EvalOptions{}), Error);
}

TEST(Emitters, CsvAndJson) {
  EvalReport r;
  r.sequences.push_back({"a", "s1", 10, Metrics{1, 2, 3, 4, 5, 6, 7}});
  r.sequences.push_back({"b", "s2", 30, Metrics{3, 2, 3, 4, 5, 6, 7}});
  r.total_frames = 40;
  r.aggregate = Metrics{2.5, 2, 3, 4, 5, 6, 7};
  const std::string csv = report_csv(r);
  EXPECT_EQ(csv.rfind("# ", 0), 0u);
  EXPECT_NE(csv.find("sequence_id,subject_id,frames,mpjpe_cm,mpjve_cm_s,mve_cm,height_err_cm,arm_err_cm,gp_cm,ff_cm\n"),
            std::string::npos);
  EXPECT_NE(csv.find("a,s1,10,1,2,3,4,5,6,7\n"), std::string::npos);
  EXPECT_NE(csv.find("ALL,,40,2.5,2,3,4,5,6,7\n"), std::string::npos);
  const std::string json = report_json(r);
  EXPECT_NE(json.find("\"mpjpe_cm\": 2.5"), std::string::npos);
  EXPECT_NE(json.find("\"total_frames\": 40"), std::string::npos);
}
