#include <benchmark/benchmark.h>

#include "egopose/evaluation.hpp"

using namespace egopose;

namespace {

const SkeletonModel& skel() { return SkeletonModel::default_model(); }

const ThreePointTrack& track() {
  static const ThreePointTrack t =
      extract_three_point(synthesize_sequence(skel(), 0, MotionProfile::kMixed, 20.0, kDefaultFps, {}), skel());
  return t;
}

ModelConfig toy() {
  ModelConfig c;
  c.tau = 40;
  c.embed_dim = 32;
  c.num_layers = 2;
  c.num_heads = 4;
  c.mlp_hidden = 128;
  return c;
}

}  // namespace

static void BM_ForwardKinematics(benchmark::State& state) {
  const MotionSequence seq = synthesize_sequence(skel(), 1, MotionProfile::kWalk, 2.0, kDefaultFps, {});
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_kinematics(skel(), seq.poses[i++ % seq.poses.size()], seq.beta));
  }
}
BENCHMARK(BM_ForwardKinematics);

static void BM_ProxyVertices(benchmark::State& state) {
  const MotionSequence seq = synthesize_sequence(skel(), 1, MotionProfile::kWalk, 2.0, kDefaultFps, {});
  const FkResult fk = forward_kinematics(skel(), seq.poses[0], seq.beta);
  for (auto _ : state) benchmark::DoNotOptimize(proxy_vertices(skel(), fk, seq.beta));
}
BENCHMARK(BM_ProxyVertices);

static void BM_WindowFeatures(benchmark::State& state) {
  const int tau = static_cast<int>(state.range(0));
  const auto window = window_ending_at(track(), 500, tau);
  for (auto _ : state) benchmark::DoNotOptimize(build_window_features(window, tau, track().fps));
}
BENCHMARK(BM_WindowFeatures)->Arg(40)->Arg(80);

static void BM_StreamingFeatures(benchmark::State& state) {
  StreamingFeatureBuilder builder(80, track().fps);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(builder.push(track().frames[i++ % track().frame_count()]));
}
BENCHMARK(BM_StreamingFeatures);

static void BM_Forward(benchmark::State& state, ModelConfig cfg) {
  const WeightSet<float> w = WeightSet<float>::initialized(cfg);
  const FeatureWindow win = build_window_features(window_ending_at(track(), 500, cfg.tau), cfg.tau, track().fps);
  ForwardWorkspace<float> ws;
  for (auto _ : state) benchmark::DoNotOptimize(forward_raw(w, win, ws));
  state.counters["fps"] = benchmark::Counter(static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
  state.counters["GFLOP/s"] = benchmark::Counter(static_cast<double>(count_flops(cfg).total()) * 1e-9 *
                                                     static_cast<double>(state.iterations()),
                                                 benchmark::Counter::kIsRate);
}
BENCHMARK_CAPTURE(BM_Forward, default_slowfast, ModelConfig{})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Forward, toy, toy())->Unit(benchmark::kMicrosecond);

static void BM_TrainStep(benchmark::State& state) {
  const ModelConfig cfg = toy();
  const WeightSet<double> w = WeightSet<double>::initialized(cfg);
  const FeatureWindow win = build_window_features(window_ending_at(track(), 500, cfg.tau), cfg.tau, track().fps);
  std::array<double, kOutputDim> g{};
  g.fill(0.01);
  for (auto _ : state) benchmark::DoNotOptimize(backward(w, win, g));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
