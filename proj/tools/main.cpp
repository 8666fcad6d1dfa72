// egopose: synth | train | eval | bench | fov-sim
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 config mismatch.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "egopose/errors.hpp"
#include "egopose/evaluation.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace egopose;
using namespace egopose::cli;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitConfig = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigMismatch:
    case ErrorCode::kWindowLengthMismatch:
    case ErrorCode::kOddWindow:
      return kExitConfig;
    case ErrorCode::kInvalidProfile:
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    default:
      return kExitData;
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

std::vector<MotionSequence> load_data(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "dataset path " + path.string() + " does not exist");
  auto seqs = load_dataset(path);
  if (seqs.empty()) throw Error(ErrorCode::kEmptyDataset, "no .epsq files under " + path.string());
  return seqs;
}

// -- visibility options shared by train / eval / fov-sim --------------------------

struct VisibilityArgs {
  std::string mask = "none";
  double p = 0.2;
  std::string fov_preset;
  std::optional<double> fov_h;
  std::optional<double> fov_v;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--mask", mask, "none | random | fov")->check(CLI::IsMember({"none", "random", "fov"}));
    cmd->add_option("--p", p, "drop probability for --mask random")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--fov-preset,--preset", fov_preset, "fisheye180 | quest2 | hololens2");
    cmd->add_option("--fov-deg,--fov-h", fov_h, "horizontal field of view in degrees");
    cmd->add_option("--fov-v-deg,--fov-v", fov_v, "vertical field of view (defaults to horizontal)");
  }

  FovConfig fov() const {
    if (fov_h) return FovConfig(*fov_h, fov_v);
    return FovConfig::preset(fov_preset.empty() ? "quest2" : fov_preset);
  }

  json to_json() const {
    json j = {{"kind", mask}};
    if (mask == "random") j["p"] = p;
    if (mask == "fov") {
      const FovConfig f = fov();
      j["fov_h_deg"] = f.alpha_h_deg();
      j["fov_v_deg"] = f.alpha_v_deg();
      if (!fov_h) j["fov_preset"] = fov_preset.empty() ? "quest2" : fov_preset;
    }
    return j;
  }
};

MaskStrategy mask_from_json(const json& j) {
  const std::string kind = j.value("kind", "none");
  if (kind == "none") return MaskStrategy::none();
  if (kind == "random") return MaskStrategy::random(j.value("p", 0.2));
  if (kind == "fov") {
    if (j.contains("fov_h_deg")) {
      return MaskStrategy::field_of_view(FovConfig(j.at("fov_h_deg").get<double>(), j.value("fov_v_deg", j.at("fov_h_deg").get<double>())));
    }
    return MaskStrategy::field_of_view(FovConfig::preset(j.value("fov_preset", "quest2")));
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown mask kind '" + kind + "'");
}

// -- synth ---------------------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string profile = "walk";
  double seconds = 30.0;
  double fps = kDefaultFps;
  int count = 1;
  std::optional<double> height;
  std::vector<double> height_range;
  fs::path out;
  fs::path manifest;
};

int run_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
  const MotionProfile profile = parse_profile(a.profile);
  const SkeletonModel& model = SkeletonModel::default_model();
  if (a.count < 1) throw Error(ErrorCode::kInvalidArgument, "--count must be at least 1");
  if (!a.height_range.empty() && a.height_range.size() != 2) {
    throw Error(ErrorCode::kInvalidArgument, "--height-range takes two values");
  }

  const bool single_file = a.count == 1 && a.out.extension() == ".epsq";
  RunManifest manifest("synth", argv);
  json cfg = {{"profile", a.profile}, {"seconds", a.seconds}, {"fps", a.fps}, {"count", a.count}};
  if (a.height) cfg["height_m"] = *a.height;
  if (!a.height_range.empty()) cfg["height_range_m"] = a.height_range;
  manifest.set_config(cfg);
  manifest.add_seed("seed", a.seed);

  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(i);
    ShapeParams beta{};
    if (a.height) {
      beta = shape_for_height(model, *a.height);
    } else if (!a.height_range.empty()) {
      beta = random_subject_shape(model, seed, a.height_range[0], a.height_range[1]);
    }
    MotionSequence seq = synthesize_sequence(model, seed, profile, a.seconds, a.fps, beta);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06llu", a.profile.c_str(), static_cast<unsigned long long>(seed));
    seq.sequence_id = name;
    std::snprintf(name, sizeof(name), "subject_%06llu", static_cast<unsigned long long>(seed));
    seq.subject_id = name;
    const fs::path path = single_file ? a.out : a.out / (seq.sequence_id + ".epsq");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_sequence(seq, path);
    const BodyMeasurements m = t_pose_measurements(model, beta);
    std::printf("%s frames=%zu fps=%g height_m=%.3f arm_m=%.3f profile=%s\n", path.string().c_str(),
                seq.frame_count(), seq.fps, m.height, m.arm_length, a.profile.c_str());
    manifest.add_output(path);
  }
  manifest.add_timing("synthesis", seconds_since(t0));
  const fs::path mpath = !a.manifest.empty() ? a.manifest
                         : single_file      ? with_suffix(a.out, ".manifest.json")
                                            : a.out / "synth_manifest.json";
  manifest.write(mpath);
  return kExitOk;
}

// -- train ------------------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  fs::path checkpoint;
  fs::path log;
  fs::path manifest;
  std::optional<fs::path> resume;
  VisibilityArgs vis;
  std::optional<std::int64_t> iterations, checkpoint_every, decay_every;
  std::optional<int> batch, tau, embed, layers, heads, mlp, threads, stride;
  std::optional<double> lr, lambda_beta;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> shape, feature_mode;
  bool plain = false;
  bool toy = false;
};

json default_train_json() {
  const TrainConfig tc;
  const LossWeights lw;
  return {{"model", json::parse(ModelConfig{}.to_json_text())},
          {"train",
           {{"batch_size", tc.batch_size},
            {"lr0", tc.lr0},
            {"decay_factor", tc.decay_factor},
            {"decay_every", tc.decay_every},
            {"iterations", tc.iterations},
            {"seed", tc.seed},
            {"window_stride", tc.window_stride},
            {"checkpoint_every", tc.checkpoint_every},
            {"threads", tc.threads}}},
          {"loss", {{"ori", lw.ori}, {"rot", lw.rot}, {"pos", lw.pos}, {"beta", lw.beta}}},
          {"mask", {{"kind", "none"}}},
          {"shape_strategy", "estimate"}};
}

/// Small model used by the examples and the acceptance suite.
json toy_model_json() {
  return {{"tau", 40}, {"embed_dim", 32}, {"num_layers", 2}, {"num_heads", 4}, {"mlp_hidden", 128}};
}

int run_train(TrainArgs& a, const std::vector<std::string>& argv, CLI::App* cmd) {
  json cfg = default_train_json();
  if (!a.config.empty()) cfg.merge_patch(read_json_file(a.config));
  if (a.toy) cfg["model"].merge_patch(toy_model_json());

  // Flags win over the config file.
  auto& m = cfg["model"];
  auto& t = cfg["train"];
  if (a.tau) m["tau"] = *a.tau;
  if (a.embed) m["embed_dim"] = *a.embed;
  if (a.layers) m["num_layers"] = *a.layers;
  if (a.heads) m["num_heads"] = *a.heads;
  if (a.mlp) m["mlp_hidden"] = *a.mlp;
  if (a.plain) m["slowfast"] = false;
  if (a.feature_mode) m["feature_mode"] = *a.feature_mode;
  if (a.iterations) t["iterations"] = *a.iterations;
  if (a.batch) t["batch_size"] = *a.batch;
  if (a.lr) t["lr0"] = *a.lr;
  if (a.decay_every) t["decay_every"] = *a.decay_every;
  if (a.seed) {
    t["seed"] = *a.seed;
    m["seed"] = *a.seed;
  }
  if (a.stride) t["window_stride"] = *a.stride;
  if (a.checkpoint_every) t["checkpoint_every"] = *a.checkpoint_every;
  if (a.threads) t["threads"] = *a.threads;
  if (a.lambda_beta) cfg["loss"]["beta"] = *a.lambda_beta;
  if (a.shape) cfg["shape_strategy"] = *a.shape;
  const bool mask_flags = cmd->count("--mask") + cmd->count("--p") + cmd->count("--fov-preset") +
                              cmd->count("--fov-deg") + cmd->count("--fov-v-deg") >
                          0;
  if (mask_flags) {
    cfg["mask"] = a.vis.to_json();
  }
  if (!a.data.empty()) cfg["data"] = a.data.string();
  if (!cfg.contains("data")) throw Error(ErrorCode::kInvalidArgument, "no dataset given (--data or config)");

  ModelConfig mc;
  TrainOptions opts;
  try {
    mc = ModelConfig::from_json_text(m.dump());
    opts.train.batch_size = t.at("batch_size").get<int>();
    opts.train.lr0 = t.at("lr0").get<double>();
    opts.train.decay_factor = t.at("decay_factor").get<double>();
    opts.train.decay_every = t.at("decay_every").get<std::int64_t>();
    opts.train.iterations = t.at("iterations").get<std::int64_t>();
    opts.train.seed = t.at("seed").get<std::uint64_t>();
    opts.train.window_stride = t.at("window_stride").get<int>();
    opts.train.checkpoint_every = t.at("checkpoint_every").get<std::int64_t>();
    opts.train.threads = t.at("threads").get<int>();
    const auto& l = cfg["loss"];
    opts.loss = LossWeights{l.at("ori").get<double>(), l.at("rot").get<double>(), l.at("pos").get<double>(),
                            l.at("beta").get<double>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("train config: ") + e.what());
  }
  opts.mask = mask_from_json(cfg["mask"]);
  opts.shape_mode = parse_shape_mode(cfg["shape_strategy"].get<std::string>());
  opts.checkpoint_path = a.checkpoint.empty() ? with_suffix(a.out, ".ckpt") : a.checkpoint;
  opts.log_path = a.log.empty() ? with_suffix(a.out, ".log.jsonl") : a.log;
  if (a.resume) {
    if (!fs::exists(*a.resume)) throw Error(ErrorCode::kIo, "checkpoint " + a.resume->string() + " not found");
    opts.resume_from = *a.resume;
  }
  // Record the fully resolved FoV so the manifest is self-describing.
  if (opts.mask.kind == MaskKind::kFov) {
    cfg["mask"]["fov_h_deg"] = opts.mask.fov.alpha_h_deg();
    cfg["mask"]["fov_v_deg"] = opts.mask.fov.alpha_v_deg();
  }

  RunManifest manifest("train", argv);
  manifest.set_config(cfg);
  manifest.add_seed("train", opts.train.seed);
  manifest.add_seed("model_init", mc.seed);
  manifest.add_input(cfg["data"].get<std::string>());
  if (a.resume) manifest.add_input(*a.resume);

  const auto t_load = std::chrono::steady_clock::now();
  const auto data = load_data(cfg["data"].get<std::string>());
  manifest.add_timing("load", seconds_since(t_load));
  std::printf("model: %zu parameters, %.4f GFLOPs per window\n", count_params(mc),
              static_cast<double>(count_flops(mc).total()) * 1e-9);

  const std::int64_t report_every = std::max<std::int64_t>(1, opts.train.iterations / 20);
  opts.on_iteration = [&](const TrainLogRecord& r) {
    if (r.iteration % report_every == 0) {
      std::printf("iter %lld  lr %.3g  loss %.5f  mpjpe %.2f cm\n", static_cast<long long>(r.iteration), r.lr,
                  r.loss.total, r.mpjpe_cm);
      std::fflush(stdout);
    }
    return true;
  };
  const auto t_train = std::chrono::steady_clock::now();
  const TrainResult result = train(mc, opts, data);
  manifest.add_timing("train", seconds_since(t_train));

  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_weights(result.weights, a.out, json({{"train_config", cfg}}).dump());
  manifest.add_output(a.out);
  manifest.add_output(opts.checkpoint_path);
  manifest.add_output(opts.log_path);
  manifest.extra()["iterations_done"] = result.iterations_done;
  if (!result.log.empty()) {
    manifest.extra()["final_loss"] = result.log.back().loss.total;
    manifest.extra()["final_batch_mpjpe_cm"] = result.log.back().mpjpe_cm;
  }
  manifest.write(a.manifest.empty() ? with_suffix(a.out, ".manifest.json") : a.manifest);
  std::printf("wrote %s\n", a.out.string().c_str());
  return kExitOk;
}

// -- eval ---------------------------------------------------------------------------------

struct EvalArgs {
  fs::path weights;
  fs::path data;
  fs::path out_dir;
  std::vector<double> offsets;
  std::string shape = "estimate";
  int median_frames = 60;
  std::uint64_t seed = 0;
  VisibilityArgs vis;
  bool compare_fov = false;
  fs::path weights_full;
  fs::path weights_random;
  std::vector<std::string> weights_fov;
  std::vector<double> fovs{180.0, 120.0, 90.0};
};

void print_metrics(const char* label, const Metrics& m) {
  std::printf("%-10s MPJPE %.3f cm  MPJVE %.2f cm/s  MVE %.3f cm  height %.2f cm  arm %.2f cm  GP %.3f cm  FF %.3f cm\n",
              label, m.mpjpe_cm, m.mpjve_cm_s, m.mve_cm, m.height_err_cm, m.arm_err_cm, m.gp_cm, m.ff_cm);
}

int run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  RunManifest manifest("eval", argv);
  EvalOptions eo;
  eo.shape_mode = parse_shape_mode(a.shape);
  eo.median_frames = a.median_frames;
  eo.seed = a.seed;
  eo.visibility = mask_from_json(a.vis.to_json());
  json cfg = {{"shape_strategy", a.shape},
              {"median_frames", a.median_frames},
              {"visibility", a.vis.to_json()},
              {"offsets_m", a.offsets}};
  manifest.add_seed("visibility", a.seed);
  manifest.add_input(a.data);

  const auto data = load_data(a.data);
  const SkeletonModel& skeleton = SkeletonModel::default_model();
  fs::create_directories(a.out_dir);

  if (!a.weights.empty()) {
    manifest.add_input(a.weights);
    const WeightSet<float> weights = load_weights(a.weights);
    cfg["model"] = json::parse(weights.config().to_json_text());
    std::printf("model: %zu parameters\n", weights.parameter_count());

    const auto t0 = std::chrono::steady_clock::now();
    const EvalReport report = evaluate(weights, data, skeleton, eo);
    manifest.add_timing("evaluate", seconds_since(t0));
    write_file_atomic(a.out_dir / "report.csv", report_csv(report));
    write_file_atomic(a.out_dir / "report.json", report_json(report));
    manifest.add_output(a.out_dir / "report.csv");
    manifest.add_output(a.out_dir / "report.json");
    print_metrics("aggregate", report.aggregate);

    if (!a.offsets.empty()) {
      const auto t1 = std::chrono::steady_clock::now();
      const auto rows = offset_sweep(weights, data, a.offsets, skeleton, eo);
      manifest.add_timing("offset_sweep", seconds_since(t1));
      write_file_atomic(a.out_dir / "offsets.csv", offset_table_csv(rows));
      manifest.add_output(a.out_dir / "offsets.csv");
      for (const auto& r : rows) {
        char label[32];
        std::snprintf(label, sizeof(label), "+%gm", r.offset_m);
        print_metrics(label, r.report.aggregate);
      }
    }
  } else if (!a.compare_fov) {
    throw Error(ErrorCode::kInvalidArgument, "--weights is required unless --compare-fov is given");
  }

  if (a.compare_fov) {
    std::vector<WeightSet<float>> owned;
    owned.reserve(2 + a.weights_fov.size());
    StrategyModels models;
    auto load_into = [&](const fs::path& p) -> const WeightSet<float>* {
      if (p.empty()) return nullptr;
      manifest.add_input(p);
      owned.push_back(load_weights(p));
      return &owned.back();
    };
    models.full = load_into(a.weights_full);
    models.random = load_into(a.weights_random);
    for (const auto& item : a.weights_fov) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorCode::kInvalidArgument, "--weights-fov entries look like 90=path.epwt");
      }
      models.fov[std::stod(item.substr(0, eq))] = load_into(item.substr(eq + 1));
    }
    cfg["fovs_deg"] = a.fovs;
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = fov_strategy_compare(models, data, a.fovs, skeleton, eo);
    manifest.add_timing("fov_compare", seconds_since(t0));
    write_file_atomic(a.out_dir / "fov_table.csv", fov_table_csv(rows));
    manifest.add_output(a.out_dir / "fov_table.csv");
    for (const auto& r : rows) {
      std::printf("%-7s %5.0f deg  MPJPE %.3f cm  MPJVE %.2f cm/s\n", r.strategy.c_str(), r.fov_deg, r.mpjpe_cm,
                  r.mpjve_cm_s);
    }
  }
  manifest.set_config(cfg);
  manifest.write(a.out_dir / "manifest.json");
  return kExitOk;
}

// -- bench -------------------------------------------------------------------------------

struct BenchArgs {
  fs::path weights;
  double seconds = 10.0;
  double warmup = 1.0;
  int threads = 1;
  std::uint64_t seed = 0;
  fs::path json_out;
  bool toy = false;
};

struct StreamStats {
  std::vector<double> latencies_us;
  std::size_t frames = 0;
  double elapsed_s = 0.0;
};

int run_bench(const BenchArgs& a, const std::vector<std::string>& argv) {
  if (a.threads < 1) throw Error(ErrorCode::kInvalidArgument, "--threads must be at least 1");
  RunManifest manifest("bench", argv);
  WeightSet<float> weights;
  if (!a.weights.empty()) {
    weights = load_weights(a.weights);
    manifest.add_input(a.weights);
  } else {
    ModelConfig cfg;
    if (a.toy) cfg = ModelConfig::from_json_text(toy_model_json().dump());
    cfg.seed = a.seed;
    weights = WeightSet<float>::initialized(cfg);
  }
  const ModelConfig& cfg = weights.config();
  const SkeletonModel& skeleton = SkeletonModel::default_model();
  const ThreePointTrack track =
      extract_three_point(synthesize_sequence(skeleton, a.seed, MotionProfile::kMixed, 60.0, kDefaultFps, {}), skeleton);

  // One independent live stream per thread: incremental window update + forward.
  auto run_stream = [&](StreamStats& st) {
    StreamingFeatureBuilder builder(cfg.tau, track.fps, cfg.feature_mode);
    ForwardWorkspace<float> ws;
    std::size_t i = 0;
    volatile double sink = 0.0;
    const auto warm_end = std::chrono::steady_clock::now() + std::chrono::duration<double>(a.warmup);
    while (std::chrono::steady_clock::now() < warm_end) {
      sink = sink + forward_raw(weights, builder.push(track.frames[i++ % track.frame_count()]), ws)[0];
    }
    st.latencies_us.reserve(static_cast<std::size_t>(a.seconds * 2000));
    const auto t0 = std::chrono::steady_clock::now();
    const auto end = t0 + std::chrono::duration<double>(a.seconds);
    auto now = t0;
    while (now < end) {
      const auto s = now;
      sink = sink + forward_raw(weights, builder.push(track.frames[i++ % track.frame_count()]), ws)[0];
      now = std::chrono::steady_clock::now();
      st.latencies_us.push_back(std::chrono::duration<double, std::micro>(now - s).count());
    }
    st.frames = st.latencies_us.size();
    st.elapsed_s = std::chrono::duration<double>(now - t0).count();
  };

  std::vector<StreamStats> stats(static_cast<std::size_t>(a.threads));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < a.threads; ++t) pool.emplace_back(run_stream, std::ref(stats[static_cast<std::size_t>(t)]));
    run_stream(stats[0]);
  }

  std::vector<double> all;
  double fps_total = 0.0;
  for (const auto& st : stats) {
    all.insert(all.end(), st.latencies_us.begin(), st.latencies_us.end());
    fps_total += static_cast<double>(st.frames) / st.elapsed_s;
  }
  std::sort(all.begin(), all.end());
  auto pct = [&](double q) { return all.empty() ? 0.0 : all[static_cast<std::size_t>(q * static_cast<double>(all.size() - 1))]; };
  double mean = 0.0;
  for (double v : all) mean += v;
  mean /= std::max<std::size_t>(all.size(), 1);

  const FlopCount flops = count_flops(cfg);
  json result = {{"model", json::parse(cfg.to_json_text())},
                 {"streams", a.threads},
                 {"measured_seconds", a.seconds},
                 {"frames", all.size()},
                 {"throughput_fps", fps_total},
                 {"per_stream_fps", fps_total / a.threads},
                 {"latency_us", {{"mean", mean}, {"p50", pct(0.5)}, {"p90", pct(0.9)}, {"p99", pct(0.99)}, {"max", pct(1.0)}}},
                 {"flops", flops.total()},
                 {"gflops", static_cast<double>(flops.total()) * 1e-9},
                 {"params", count_params(cfg)},
                 {"realtime_gate_fps", 60.0},
                 {"stretch_target_fps", 600.0},
                 {"passes_realtime_gate", fps_total / a.threads >= 60.0}};
  std::printf("params %zu  FLOPs %.4fG  streams %d\n", count_params(cfg), static_cast<double>(flops.total()) * 1e-9,
              a.threads);
  std::printf("throughput %.1f fps (%.1f per stream)  latency mean %.1f us  p50 %.1f  p99 %.1f\n", fps_total,
              fps_total / a.threads, mean, pct(0.5), pct(0.99));

  manifest.set_config({{"seconds", a.seconds}, {"warmup", a.warmup}, {"threads", a.threads}, {"toy", a.toy}});
  manifest.add_seed("seed", a.seed);
  manifest.extra() = result;
  if (!a.json_out.empty()) {
    write_file_atomic(a.json_out, result.dump(2) + "\n");
    manifest.add_output(a.json_out);
    manifest.write(with_suffix(a.json_out, ".manifest.json"));
  }
  return kExitOk;
}

// -- fov-sim --------------------------------------------------------------------------------

struct FovSimArgs {
  fs::path data;
  fs::path out;
  VisibilityArgs vis;
  std::uint64_t seed = 0;
};

int run_fov_sim(FovSimArgs a, const std::vector<std::string>& argv) {
  if (a.vis.mask == "none") a.vis.mask = "fov";
  const MaskStrategy strategy = mask_from_json(a.vis.to_json());
  const SkeletonModel& skeleton = SkeletonModel::default_model();
  const auto data = load_data(a.data);

  std::ostringstream csv;
  csv << "# egopose fov-sim v1, strategy " << strategy.describe() << "\n";
  csv << "sequence_id,frames,left_visible,right_visible,masked_fraction\n";
  double masked_total = 0.0;
  std::size_t frames_total = 0;
  for (const auto& seq : data) {
    const ThreePointTrack track = extract_three_point(seq, skeleton);
    const VisibilityMask mask = strategy.kind == MaskKind::kRandom
                                    ? random_mask(strategy.p, a.seed, track.frame_count())
                                    : visibility_mask(strategy.fov, track);
    std::size_t left = 0, right = 0;
    for (const auto& v : mask) {
      left += v.left ? 1 : 0;
      right += v.right ? 1 : 0;
    }
    const double n = static_cast<double>(mask.size());
    const double masked = masked_fraction(mask);
    csv << seq.sequence_id << ',' << mask.size() << ',' << left / n << ',' << right / n << ',' << masked << '\n';
    masked_total += masked * n;
    frames_total += mask.size();
  }
  const double overall = frames_total ? masked_total / static_cast<double>(frames_total) : 0.0;
  std::printf("%s: %.1f%% of hand observations masked over %zu frames\n", strategy.describe().c_str(), 100.0 * overall,
              frames_total);
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_file_atomic(a.out, csv.str());
    RunManifest manifest("fov-sim", argv);
    manifest.set_config({{"visibility", a.vis.to_json()}});
    manifest.add_seed("seed", a.seed);
    manifest.add_input(a.data);
    manifest.add_output(a.out);
    manifest.extra()["masked_fraction"] = overall;
    manifest.write(with_suffix(a.out, ".manifest.json"));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Egocentric full-body pose estimation from head and hand tracking"};
  app.require_subcommand(1);
  std::function<int()> action;

  SynthArgs synth;
  auto* cs = app.add_subcommand("synth", "Generate synthetic .epsq motion sequences");
  cs->add_option("--seed", synth.seed, "base seed (sequence i uses seed + i)");
  cs->add_option("--profile", synth.profile, "walk | reach | idle | mixed");
  cs->add_option("--seconds", synth.seconds, "duration per sequence");
  cs->add_option("--fps", synth.fps, "frame rate");
  cs->add_option("--count", synth.count, "number of sequences");
  cs->add_option("--height", synth.height, "subject T-pose height in m");
  cs->add_option("--height-range", synth.height_range, "random subject heights MIN,MAX in m")->delimiter(',');
  cs->add_option("--out", synth.out, "output .epsq file or directory")->required();
  cs->add_option("--manifest", synth.manifest, "manifest path");
  cs->callback([&] { action = [&] { return run_synth(synth, args); }; });

  TrainArgs tr;
  auto* ct = app.add_subcommand("train", "Train a model");
  ct->add_option("--config", tr.config, "run config JSON (flags override it)");
  ct->add_option("--data", tr.data, ".epsq file or directory");
  ct->add_option("--out", tr.out, "output weight file")->required();
  ct->add_option("--checkpoint", tr.checkpoint, "checkpoint path (default OUT.ckpt)");
  ct->add_option("--checkpoint-every", tr.checkpoint_every, "iterations between checkpoints");
  ct->add_option("--resume", tr.resume, "resume from a checkpoint");
  ct->add_option("--log", tr.log, "JSONL log path (default OUT.log.jsonl)");
  ct->add_option("--manifest", tr.manifest, "manifest path (default OUT.manifest.json)");
  ct->add_option("--iterations", tr.iterations);
  ct->add_option("--batch", tr.batch);
  ct->add_option("--lr", tr.lr);
  ct->add_option("--decay-every", tr.decay_every);
  ct->add_option("--seed", tr.seed, "seed for initialization, shuffling and masking");
  ct->add_option("--stride", tr.stride, "window stride");
  ct->add_option("--threads", tr.threads, "gradient shards computed in parallel");
  ct->add_option("--tau", tr.tau);
  ct->add_option("--embed", tr.embed, "embedding width per stream");
  ct->add_option("--layers", tr.layers);
  ct->add_option("--heads", tr.heads);
  ct->add_option("--mlp", tr.mlp, "MLP hidden width");
  ct->add_flag("--plain", tr.plain, "disable SlowFast fusion");
  ct->add_flag("--toy", tr.toy, "small model (tau 40, width 64, 2 layers)");
  ct->add_option("--feature-mode", tr.feature_mode, "decomposed | global");
  ct->add_option("--shape-strategy", tr.shape, "mean | calib | estimate");
  ct->add_option("--lambda-beta", tr.lambda_beta, "weight of the L1 shape regularizer");
  tr.vis.add_to(ct);
  ct->callback([&] { action = [&] { return run_train(tr, args, ct); }; });

  EvalArgs ev;
  auto* ce = app.add_subcommand("eval", "Evaluate weights on a dataset");
  ce->add_option("--weights", ev.weights, "weight file");
  ce->add_option("--data", ev.data, ".epsq file or directory")->required();
  ce->add_option("--out-dir", ev.out_dir, "report directory")->required();
  ce->add_option("--offsets", ev.offsets, "offset sweep in m, e.g. 0,2,5,10,50")->delimiter(',');
  ce->add_option("--shape-strategy", ev.shape, "mean | calib | estimate");
  ce->add_option("--median-frames", ev.median_frames, "frames feeding the median shape");
  ce->add_option("--seed", ev.seed, "seed for random visibility");
  ce->add_flag("--compare-fov", ev.compare_fov, "strategy x FoV table");
  ce->add_option("--weights-full", ev.weights_full, "full-visibility weights");
  ce->add_option("--weights-random", ev.weights_random, "random-masking weights");
  ce->add_option("--weights-fov", ev.weights_fov, "FoV-trained weights as DEG=path")->delimiter(',');
  ce->add_option("--fovs", ev.fovs, "fields of view to compare")->delimiter(',');
  ev.vis.add_to(ce);
  ce->callback([&] { action = [&] { return run_eval(ev, args); }; });

  BenchArgs bn;
  auto* cb = app.add_subcommand("bench", "Single-stream real-time throughput");
  cb->add_option("--weights", bn.weights, "weight file (default: initialized default config)");
  cb->add_option("--seconds", bn.seconds, "measured duration");
  cb->add_option("--warmup", bn.warmup, "warm-up duration");
  cb->add_option("--threads", bn.threads, "independent streams");
  cb->add_option("--seed", bn.seed);
  cb->add_option("--json", bn.json_out, "write results as JSON");
  cb->add_flag("--toy", bn.toy, "bench the small model instead of the default");
  cb->callback([&] { action = [&] { return run_bench(bn, args); }; });

  FovSimArgs fs_args;
  auto* cf = app.add_subcommand("fov-sim", "Report how often hands leave the field of view");
  cf->add_option("--data", fs_args.data, ".epsq file or directory")->required();
  cf->add_option("--out", fs_args.out, "CSV output (default stdout)");
  cf->add_option("--seed", fs_args.seed, "seed for --mask random");
  fs_args.vis.add_to(cf);
  cf->callback([&] { action = [&] { return run_fov_sim(fs_args, args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action();
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
