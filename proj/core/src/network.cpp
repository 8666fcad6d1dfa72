#include "egopose/network.hpp"

#include <Eigen/Core>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "egopose/errors.hpp"

namespace egopose {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

constexpr double kLayerNormEps = 1e-5;
constexpr char kWeightMagic[4] = {'E', 'P', 'W', 'T'};
constexpr std::string_view kOptimizerPrefix = "optimizer.";

template <typename T>
Eigen::Map<const Mat<T>> view(const Tensor<T>& t) {
  return Eigen::Map<const Mat<T>>(t.data.data(), t.rows, t.cols);
}
template <typename T>
Eigen::Map<Mat<T>> view(Tensor<T>& t) {
  return Eigen::Map<Mat<T>>(t.data.data(), t.rows, t.cols);
}
template <typename T>
Eigen::Map<const RowVec<T>> row_view(const Tensor<T>& t) {
  return Eigen::Map<const RowVec<T>>(t.data.data(), t.cols);
}
template <typename T>
Eigen::Map<RowVec<T>> row_view(Tensor<T>& t) {
  return Eigen::Map<RowVec<T>>(t.data.data(), t.cols);
}

std::string layer_name(int layer, const char* leaf) {
  return "layers." + std::to_string(layer) + "." + leaf;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return cdf + x * pdf;
}

// Row-wise layer norm; keeps the normalized rows and reciprocal deviations.
template <typename T>
void layer_norm(const Mat<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, Mat<T>& normalized,
                ColVec<T>& rstd, Mat<T>& out) {
  const auto cols = x.cols();
  normalized.resize(x.rows(), cols);
  rstd.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / static_cast<T>(cols);
    rstd(r) = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    normalized.row(r) = centered * rstd(r);
  }
  out = (normalized.array().rowwise() * row_view(gain).array()).rowwise() + row_view(bias).array();
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& grad_out, const Mat<T>& normalized, const ColVec<T>& rstd,
                           const Tensor<T>& gain, Tensor<T>& grad_gain, Tensor<T>& grad_bias) {
  row_view(grad_gain) += (grad_out.array() * normalized.array()).matrix().colwise().sum();
  row_view(grad_bias) += grad_out.colwise().sum();
  const Mat<T> g_hat = (grad_out.array().rowwise() * row_view(gain).array()).matrix();
  Mat<T> grad_in(grad_out.rows(), grad_out.cols());
  const auto cols = static_cast<T>(grad_out.cols());
  for (Eigen::Index r = 0; r < grad_out.rows(); ++r) {
    const T mean_g = g_hat.row(r).sum() / cols;
    const T mean_gx = g_hat.row(r).dot(normalized.row(r)) / cols;
    grad_in.row(r) =
        rstd(r) * (g_hat.row(r).array() - mean_g - normalized.row(r).array() * mean_gx).matrix();
  }
  return grad_in;
}

template <typename T>
Mat<T> positional_encoding(int tokens, int dim) {
  Mat<T> pe(tokens, dim);
  for (int pos = 0; pos < tokens; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
      pe(pos, i) = static_cast<T>(std::sin(pos * freq));
      if (i + 1 < dim) pe(pos, i + 1) = static_cast<T>(std::cos(pos * freq));
    }
  }
  return pe;
}

template <typename T>
Mat<T> frame_rows(const FeatureWindow& window, int first, int stride, int count) {
  Mat<T> out(count, kFeatureDim);
  for (int i = 0; i < count; ++i) {
    const auto frame = window.frame(first + i * stride);
    for (int c = 0; c < kFeatureDim; ++c) out(i, c) = static_cast<T>(frame[c]);
  }
  return out;
}

void check_window(const ModelConfig& config, const FeatureWindow& window) {
  if (window.tau != config.tau) {
    throw Error(ErrorCode::kConfigMismatch, "window length " + std::to_string(window.tau) +
                                                " does not match model tau " + std::to_string(config.tau));
  }
}

template <typename T>
void write_pod(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorCode::kFormat, "truncated weight file");
  }
  return value;
}

}  // namespace

// -- config ----------------------------------------------------------------------

void ModelConfig::validate() const {
  if (tau <= 0) throw Error(ErrorCode::kInvalidArgument, "tau must be positive");
  if (slowfast && tau % 2 != 0) throw Error(ErrorCode::kOddWindow, "SlowFast fusion needs an even tau");
  if (feature_dim != kFeatureDim) {
    throw Error(ErrorCode::kConfigMismatch, "feature_dim must be " + std::to_string(kFeatureDim));
  }
  if (embed_dim <= 0 || num_layers < 0 || num_heads <= 0 || mlp_hidden <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be positive");
  }
  if (token_dim() % num_heads != 0) {
    throw Error(ErrorCode::kInvalidArgument, "token dim must be divisible by num_heads");
  }
}

std::string ModelConfig::to_json_text() const {
  nlohmann::json j = {{"tau", tau},
                      {"feature_dim", feature_dim},
                      {"embed_dim", embed_dim},
                      {"num_layers", num_layers},
                      {"num_heads", num_heads},
                      {"mlp_hidden", mlp_hidden},
                      {"slowfast", slowfast},
                      {"feature_mode", feature_mode_name(feature_mode)},
                      {"seed", seed}};
  return j.dump();
}

ModelConfig ModelConfig::from_json_text(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.tau = j.value("tau", c.tau);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.slowfast = j.value("slowfast", c.slowfast);
    c.feature_mode = parse_feature_mode(j.value("feature_mode", std::string("decomposed")));
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("model config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

// -- outputs -----------------------------------------------------------------------

PoseOutput PoseOutput::from_vector(std::span<const double, kOutputDim> v) {
  PoseOutput out;
  for (int i = 0; i < 6; ++i) out.root_orientation[i] = v[i];
  for (int j = 0; j < kNumLocalJoints; ++j) {
    for (int i = 0; i < 6; ++i) out.local_rotations[j][i] = v[6 + 6 * j + i];
  }
  for (int b = 0; b < kNumBetas; ++b) out.beta[b] = v[6 + 6 * kNumLocalJoints + b];
  return out;
}

std::array<double, kOutputDim> PoseOutput::to_vector() const {
  std::array<double, kOutputDim> v{};
  for (int i = 0; i < 6; ++i) v[i] = root_orientation[i];
  for (int j = 0; j < kNumLocalJoints; ++j) {
    for (int i = 0; i < 6; ++i) v[6 + 6 * j + i] = local_rotations[j][i];
  }
  for (int b = 0; b < kNumBetas; ++b) v[6 + 6 * kNumLocalJoints + b] = beta[b];
  return v;
}

// -- weight sets ---------------------------------------------------------------------

template <typename T>
WeightSet<T>::WeightSet(const ModelConfig& config) : config_(config) {
  config.validate();
  const int f = config.feature_dim;
  const int e = config.embed_dim;
  const int d = config.token_dim();
  const int h = config.mlp_hidden;
  if (config.slowfast) {
    add("embed.slow.weight", f, e);
    add("embed.slow.bias", 1, e);
    add("embed.fast.weight", f, e);
    add("embed.fast.bias", 1, e);
  } else {
    add("embed.weight", f, d);
    add("embed.bias", 1, d);
  }
  for (int l = 0; l < config.num_layers; ++l) {
    add(layer_name(l, "norm1.gain"), 1, d);
    add(layer_name(l, "norm1.bias"), 1, d);
    add(layer_name(l, "attn.qkv.weight"), d, 3 * d);
    add(layer_name(l, "attn.qkv.bias"), 1, 3 * d);
    add(layer_name(l, "attn.out.weight"), d, d);
    add(layer_name(l, "attn.out.bias"), 1, d);
    add(layer_name(l, "norm2.gain"), 1, d);
    add(layer_name(l, "norm2.bias"), 1, d);
    add(layer_name(l, "mlp.fc1.weight"), d, h);
    add(layer_name(l, "mlp.fc1.bias"), 1, h);
    add(layer_name(l, "mlp.fc2.weight"), h, d);
    add(layer_name(l, "mlp.fc2.bias"), 1, d);
  }
  add("final_norm.gain", 1, d);
  add("final_norm.bias", 1, d);
  add("head.weight", d, kOutputDim);
  add("head.bias", 1, kOutputDim);
}

template <typename T>
void WeightSet<T>::add(const std::string& name, int rows, int cols) {
  index_[name] = names_.size();
  names_.push_back(name);
  tensors_.push_back(Tensor<T>{rows, cols, AlignedVector<T>(static_cast<std::size_t>(rows) * cols, T(0))});
}

template <typename T>
WeightSet<T> WeightSet<T>::initialized(const ModelConfig& config) {
  // Draw in double so float and double networks start from the same values.
  WeightSet<double> ws(config);
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = 0; i < ws.tensor_count(); ++i) {
    const std::string& name = ws.name(i);
    auto& t = ws.tensor(i);
    const bool is_gain = name.ends_with(".gain");
    const bool is_weight = name.ends_with(".weight");
    if (is_gain) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    } else if (is_weight) {
      double limit = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
      if (name == "head.weight") limit *= 0.1;
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : t.data) v = dist(rng);
    }
  }
  auto& head_bias = ws["head.bias"].data;
  for (int r = 0; r <= kNumLocalJoints; ++r) {
    head_bias[6 * r + 0] = 1.0;
    head_bias[6 * r + 4] = 1.0;
  }
  return ws.template cast<T>();
}

template <typename T>
Tensor<T>& WeightSet<T>::operator[](const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kConfigMismatch, "no tensor named " + name);
  return tensors_[it->second];
}

template <typename T>
const Tensor<T>& WeightSet<T>::operator[](const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::kConfigMismatch, "no tensor named " + name);
  return tensors_[it->second];
}

template <typename T>
std::size_t WeightSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
void WeightSet<T>::set_zero() {
  for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T(0));
}

template <typename T>
void WeightSet<T>::add_scaled(const WeightSet& other, T scale) {
  if (other.names_ != names_) throw Error(ErrorCode::kShapeMismatch, "weight sets differ in layout");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& dst = tensors_[i].data;
    const auto& src = other.tensors_[i].data;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

template <typename T>
template <typename U>
WeightSet<U> WeightSet<T>::cast() const {
  WeightSet<U> out;
  out.config_ = config_;
  out.layout_version_ = layout_version_;
  out.names_ = names_;
  out.index_ = index_;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_) {
    Tensor<U> c{t.rows, t.cols, AlignedVector<U>(t.data.size())};
    for (std::size_t k = 0; k < t.data.size(); ++k) c.data[k] = static_cast<U>(t.data[k]);
    out.tensors_.push_back(std::move(c));
  }
  return out;
}

// -- forward / backward ------------------------------------------------------------------

template <typename T>
struct LayerCache {
  Mat<T> x_in;
  Mat<T> norm1_hat;
  ColVec<T> norm1_rstd;
  Mat<T> h1;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;
  Mat<T> attn;
  Mat<T> x_mid;
  Mat<T> norm2_hat;
  ColVec<T> norm2_rstd;
  Mat<T> h2;
  Mat<T> pre;
  Mat<T> act;
};

template <typename T>
struct ForwardCache {
  Mat<T> slow_in;  // also the plain-mode input
  Mat<T> fast_in;
  Mat<T> positional;
  std::vector<LayerCache<T>> layers;
  Mat<T> x_out;
  Mat<T> final_hat;
  ColVec<T> final_rstd;
  Mat<T> final_norm;
};

template <typename T>
ForwardWorkspace<T>::ForwardWorkspace() : cache_(std::make_unique<ForwardCache<T>>()) {}
template <typename T>
ForwardWorkspace<T>::~ForwardWorkspace() = default;
template <typename T>
ForwardWorkspace<T>::ForwardWorkspace(ForwardWorkspace&&) noexcept = default;
template <typename T>
ForwardWorkspace<T>& ForwardWorkspace<T>::operator=(ForwardWorkspace&&) noexcept = default;

template <typename T>
std::vector<T> ForwardWorkspace<T>::attention(int layer, int head) const {
  const auto& p = cache_->layers.at(static_cast<std::size_t>(layer)).probs.at(static_cast<std::size_t>(head));
  return std::vector<T>(p.data(), p.data() + p.size());
}

std::vector<std::pair<int, int>> slowfast_pairs(int tau) {
  if (tau % 2 != 0) throw Error(ErrorCode::kOddWindow, "SlowFast fusion needs an even tau");
  const int n = tau / 2;
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.emplace_back(2 * i, n + i);
  return out;
}

namespace {

template <typename T>
Mat<T> embed_tokens(const WeightSet<T>& w, const FeatureWindow& window, ForwardCache<T>& cache) {
  const ModelConfig& cfg = w.config();
  const int n = cfg.token_count();
  const int e = cfg.embed_dim;
  Mat<T> x(n, cfg.token_dim());
  if (cfg.slowfast) {
    if (window.tau % 2 != 0) throw Error(ErrorCode::kOddWindow, "SlowFast fusion needs an even tau");
    cache.slow_in = frame_rows<T>(window, 0, 2, n);
    cache.fast_in = frame_rows<T>(window, n, 1, n);
    x.leftCols(e) = (cache.slow_in * view(w["embed.slow.weight"])).rowwise() + row_view(w["embed.slow.bias"]);
    x.rightCols(e) = (cache.fast_in * view(w["embed.fast.weight"])).rowwise() + row_view(w["embed.fast.bias"]);
  } else {
    cache.slow_in = frame_rows<T>(window, 0, 1, n);
    x = (cache.slow_in * view(w["embed.weight"])).rowwise() + row_view(w["embed.bias"]);
  }
  return x;
}

}  // namespace

template <typename T>
std::vector<T> slowfast_fuse(const WeightSet<T>& weights, const FeatureWindow& window) {
  check_window(weights.config(), window);
  ForwardCache<T> scratch;
  const Mat<T> x = embed_tokens(weights, window, scratch);
  return std::vector<T>(x.data(), x.data() + x.size());
}

template <typename T>
std::array<double, kOutputDim> forward_raw(const WeightSet<T>& w, const FeatureWindow& window,
                                           ForwardWorkspace<T>& workspace) {
  const ModelConfig& cfg = w.config();
  check_window(cfg, window);
  ForwardCache<T>& c = workspace.cache();
  const int n = cfg.token_count();
  const int d = cfg.token_dim();
  const int heads = cfg.num_heads;
  const int dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  if (c.positional.rows() != n || c.positional.cols() != d) c.positional = positional_encoding<T>(n, d);
  Mat<T> x = embed_tokens(w, window, c) + c.positional;

  c.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    LayerCache<T>& lc = c.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;
    layer_norm(lc.x_in, w[layer_name(l, "norm1.gain")], w[layer_name(l, "norm1.bias")], lc.norm1_hat,
               lc.norm1_rstd, lc.h1);
    lc.qkv.noalias() = lc.h1 * view(w[layer_name(l, "attn.qkv.weight")]);
    lc.qkv.rowwise() += row_view(w[layer_name(l, "attn.qkv.bias")]);
    lc.probs.resize(static_cast<std::size_t>(heads));
    lc.attn.resize(n, d);
    for (int h = 0; h < heads; ++h) {
      const auto q = lc.qkv.middleCols(h * dh, dh);
      const auto k = lc.qkv.middleCols(d + h * dh, dh);
      const auto v = lc.qkv.middleCols(2 * d + h * dh, dh);
      Mat<T>& p = lc.probs[static_cast<std::size_t>(h)];
      p.noalias() = (q * k.transpose()) * scale;
      for (int r = 0; r < n; ++r) {
        const T mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp().matrix();
        p.row(r) /= p.row(r).sum();
      }
      lc.attn.middleCols(h * dh, dh).noalias() = p * v;
    }
    lc.x_mid = lc.x_in;
    lc.x_mid.noalias() += lc.attn * view(w[layer_name(l, "attn.out.weight")]);
    lc.x_mid.rowwise() += row_view(w[layer_name(l, "attn.out.bias")]);
    layer_norm(lc.x_mid, w[layer_name(l, "norm2.gain")], w[layer_name(l, "norm2.bias")], lc.norm2_hat,
               lc.norm2_rstd, lc.h2);
    lc.pre.noalias() = lc.h2 * view(w[layer_name(l, "mlp.fc1.weight")]);
    lc.pre.rowwise() += row_view(w[layer_name(l, "mlp.fc1.bias")]);
    lc.act = lc.pre.unaryExpr([](T v) { return gelu(v); });
    x = lc.x_mid;
    x.noalias() += lc.act * view(w[layer_name(l, "mlp.fc2.weight")]);
    x.rowwise() += row_view(w[layer_name(l, "mlp.fc2.bias")]);
  }
  c.x_out = x.bottomRows(1);
  layer_norm(c.x_out, w["final_norm.gain"], w["final_norm.bias"], c.final_hat, c.final_rstd, c.final_norm);
  const RowVec<T> y = c.final_norm * view(w["head.weight"]) + row_view(w["head.bias"]);
  std::array<double, kOutputDim> out{};
  for (int i = 0; i < kOutputDim; ++i) out[i] = static_cast<double>(y(i));
  return out;
}

template <typename T>
PoseOutput forward(const WeightSet<T>& weights, const FeatureWindow& window) {
  ForwardWorkspace<T> ws;
  const auto raw = forward_raw(weights, window, ws);
  return PoseOutput::from_vector(raw);
}

template <typename T>
void backward_accumulate(const WeightSet<T>& w, const ForwardWorkspace<T>& workspace,
                         std::span<const double, kOutputDim> output_gradient, WeightSet<T>& g) {
  const ModelConfig& cfg = w.config();
  const ForwardCache<T>& c = workspace.cache();
  const int n = cfg.token_count();
  const int d = cfg.token_dim();
  const int heads = cfg.num_heads;
  const int dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  RowVec<T> dy(kOutputDim);
  for (int i = 0; i < kOutputDim; ++i) dy(i) = static_cast<T>(output_gradient[i]);

  view(g["head.weight"]).noalias() += c.final_norm.transpose() * dy;
  row_view(g["head.bias"]) += dy;
  const Mat<T> d_final = dy * view(w["head.weight"]).transpose();
  const Mat<T> d_last = layer_norm_backward<T>(d_final, c.final_hat, c.final_rstd, w["final_norm.gain"],
                                               g["final_norm.gain"], g["final_norm.bias"]);
  Mat<T> dx = Mat<T>::Zero(n, d);
  dx.bottomRows(1) = d_last;

  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerCache<T>& lc = c.layers[static_cast<std::size_t>(l)];
    // x_out = x_mid + act * W2 + b2
    view(g[layer_name(l, "mlp.fc2.weight")]).noalias() += lc.act.transpose() * dx;
    row_view(g[layer_name(l, "mlp.fc2.bias")]) += dx.colwise().sum();
    Mat<T> d_pre = dx * view(w[layer_name(l, "mlp.fc2.weight")]).transpose();
    d_pre.array() *= lc.pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
    view(g[layer_name(l, "mlp.fc1.weight")]).noalias() += lc.h2.transpose() * d_pre;
    row_view(g[layer_name(l, "mlp.fc1.bias")]) += d_pre.colwise().sum();
    const Mat<T> d_h2 = d_pre * view(w[layer_name(l, "mlp.fc1.weight")]).transpose();
    Mat<T> d_mid = dx + layer_norm_backward<T>(d_h2, lc.norm2_hat, lc.norm2_rstd, w[layer_name(l, "norm2.gain")],
                                               g[layer_name(l, "norm2.gain")], g[layer_name(l, "norm2.bias")]);

    // x_mid = x_in + attn * Wo + bo
    view(g[layer_name(l, "attn.out.weight")]).noalias() += lc.attn.transpose() * d_mid;
    row_view(g[layer_name(l, "attn.out.bias")]) += d_mid.colwise().sum();
    const Mat<T> d_attn = d_mid * view(w[layer_name(l, "attn.out.weight")]).transpose();

    Mat<T> d_qkv(n, 3 * d);
    for (int h = 0; h < heads; ++h) {
      const auto q = lc.qkv.middleCols(h * dh, dh);
      const auto k = lc.qkv.middleCols(d + h * dh, dh);
      const auto v = lc.qkv.middleCols(2 * d + h * dh, dh);
      const Mat<T>& p = lc.probs[static_cast<std::size_t>(h)];
      const auto d_o = d_attn.middleCols(h * dh, dh);
      const Mat<T> d_p = d_o * v.transpose();
      d_qkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * d_o;
      const ColVec<T> row_dot = (d_p.array() * p.array()).rowwise().sum();
      const Mat<T> d_s = (p.array() * (d_p.array().colwise() - row_dot.array())).matrix() * scale;
      d_qkv.middleCols(h * dh, dh).noalias() = d_s * k;
      d_qkv.middleCols(d + h * dh, dh).noalias() = d_s.transpose() * q;
    }
    view(g[layer_name(l, "attn.qkv.weight")]).noalias() += lc.h1.transpose() * d_qkv;
    row_view(g[layer_name(l, "attn.qkv.bias")]) += d_qkv.colwise().sum();
    const Mat<T> d_h1 = d_qkv * view(w[layer_name(l, "attn.qkv.weight")]).transpose();
    dx = d_mid + layer_norm_backward<T>(d_h1, lc.norm1_hat, lc.norm1_rstd, w[layer_name(l, "norm1.gain")],
                                        g[layer_name(l, "norm1.gain")], g[layer_name(l, "norm1.bias")]);
  }

  const int e = cfg.embed_dim;
  if (cfg.slowfast) {
    view(g["embed.slow.weight"]).noalias() += c.slow_in.transpose() * dx.leftCols(e);
    row_view(g["embed.slow.bias"]) += dx.leftCols(e).colwise().sum();
    view(g["embed.fast.weight"]).noalias() += c.fast_in.transpose() * dx.rightCols(e);
    row_view(g["embed.fast.bias"]) += dx.rightCols(e).colwise().sum();
  } else {
    view(g["embed.weight"]).noalias() += c.slow_in.transpose() * dx;
    row_view(g["embed.bias"]) += dx.colwise().sum();
  }
}

template <typename T>
WeightSet<T> backward(const WeightSet<T>& weights, const FeatureWindow& window,
                      std::span<const double, kOutputDim> output_gradient) {
  ForwardWorkspace<T> ws;
  forward_raw(weights, window, ws);
  WeightSet<T> grad(weights.config());
  backward_accumulate(weights, ws, output_gradient, grad);
  return grad;
}

// -- cost model ----------------------------------------------------------------------------

FlopCount count_flops(const ModelConfig& config) {
  config.validate();
  const std::uint64_t n = static_cast<std::uint64_t>(config.token_count());
  const std::uint64_t d = static_cast<std::uint64_t>(config.token_dim());
  const std::uint64_t h = static_cast<std::uint64_t>(config.mlp_hidden);
  const std::uint64_t f = static_cast<std::uint64_t>(config.feature_dim);
  const std::uint64_t layers = static_cast<std::uint64_t>(config.num_layers);
  FlopCount out;
  // SlowFast: n tokens x two f -> d/2 projections; plain: n tokens x one f -> d.
  out.embedding = 2 * n * f * d;
  out.attention_linear = layers * 2 * (3 * n * d * d + n * d * d);
  out.attention_scores = layers * 2 * (2 * n * n * d);
  out.mlp = layers * 2 * (2 * n * d * h);
  out.head = 2 * d * static_cast<std::uint64_t>(kOutputDim);
  return out;
}

std::size_t count_params(const ModelConfig& config) {
  config.validate();
  const std::size_t f = static_cast<std::size_t>(config.feature_dim);
  const std::size_t e = static_cast<std::size_t>(config.embed_dim);
  const std::size_t d = static_cast<std::size_t>(config.token_dim());
  const std::size_t h = static_cast<std::size_t>(config.mlp_hidden);
  const std::size_t embedding = config.slowfast ? 2 * (f * e + e) : f * d + d;
  const std::size_t layer = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d);
  const std::size_t head = 2 * d + d * kOutputDim + kOutputDim;
  return embedding + static_cast<std::size_t>(config.num_layers) * layer + head;
}

// -- persistence ------------------------------------------------------------------------------

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Tensor<float>& t) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols));
  out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

}  // namespace

void save_weights(const WeightSet<float>& weights, const std::filesystem::path& path,
                  std::string_view extra_json,
                  const std::vector<std::pair<std::string, Tensor<float>>>& extra_tensors) {
  nlohmann::json doc;
  doc["model"] = nlohmann::json::parse(weights.config().to_json_text());
  doc["extra"] = extra_json.empty() ? nlohmann::json(nullptr) : nlohmann::json::parse(extra_json);
  const std::string text = doc.dump();

  // Write-then-rename so a crash never leaves a half-written weight file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(kWeightMagic, 4);
    write_pod<std::uint32_t>(out, kWeightFormatVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(weights.layout_version()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(weights.tensor_count() + extra_tensors.size()));
    for (std::size_t i = 0; i < weights.tensor_count(); ++i) write_tensor(out, weights.name(i), weights.tensor(i));
    for (const auto& [name, t] : extra_tensors) write_tensor(out, std::string(kOptimizerPrefix) + name, t);
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

WeightFile load_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, path.string() + " is not an EPWT file");
  }
  const auto format_version = read_pod<std::uint32_t>(in);
  if (format_version != kWeightFormatVersion) {
    throw Error(ErrorCode::kFormat, "unsupported EPWT version " + std::to_string(format_version));
  }
  const auto layout = read_pod<std::uint32_t>(in);
  if (layout != static_cast<std::uint32_t>(kFeatureLayoutVersion)) {
    throw Error(ErrorCode::kConfigMismatch, "weights use feature layout " + std::to_string(layout) +
                                                ", this build uses " + std::to_string(kFeatureLayoutVersion));
  }
  const auto json_bytes = read_pod<std::uint32_t>(in);
  std::string text(json_bytes, '\0');
  if (!in.read(text.data(), json_bytes)) throw Error(ErrorCode::kFormat, "truncated weight header");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("weight header JSON: ") + e.what());
  }
  if (!doc.contains("model")) throw Error(ErrorCode::kFormat, "weight header lacks model config");
  WeightFile file;
  file.weights = WeightSet<float>(ModelConfig::from_json_text(doc["model"].dump()));
  if (doc.contains("extra") && !doc["extra"].is_null()) file.extra_json = doc["extra"].dump();

  const auto count = read_pod<std::uint32_t>(in);
  std::size_t loaded = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_bytes = read_pod<std::uint32_t>(in);
    std::string name(name_bytes, '\0');
    if (!in.read(name.data(), name_bytes)) throw Error(ErrorCode::kFormat, "truncated tensor name");
    Tensor<float> t;
    t.rows = static_cast<int>(read_pod<std::uint32_t>(in));
    t.cols = static_cast<int>(read_pod<std::uint32_t>(in));
    t.data.resize(static_cast<std::size_t>(t.rows) * static_cast<std::size_t>(t.cols));
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw Error(ErrorCode::kFormat, "truncated tensor " + name);
    }
    for (float v : t.data) {
      if (!std::isfinite(v)) throw Error(ErrorCode::kFormat, "non-finite value in tensor " + name);
    }
    if (name.starts_with(kOptimizerPrefix)) {
      file.extra_tensors.emplace_back(name.substr(kOptimizerPrefix.size()), std::move(t));
      continue;
    }
    if (!file.weights.contains(name)) throw Error(ErrorCode::kConfigMismatch, "unexpected tensor " + name);
    auto& dst = file.weights[name];
    if (dst.rows != t.rows || dst.cols != t.cols) {
      throw Error(ErrorCode::kConfigMismatch, "tensor " + name + " has the wrong shape");
    }
    dst.data = std::move(t.data);
    ++loaded;
  }
  if (loaded != file.weights.tensor_count()) {
    throw Error(ErrorCode::kConfigMismatch, "weight file is missing tensors");
  }
  return file;
}

WeightSet<float> load_weights(const std::filesystem::path& path) { return load_weight_file(path).weights; }

// -- instantiations ---------------------------------------------------------------------------

#define EGOPOSE_INSTANTIATE(T)                                                                        \
  template class WeightSet<T>;                                                                        \
  template class ForwardWorkspace<T>;                                                                 \
  template WeightSet<float> WeightSet<T>::cast<float>() const;                                        \
  template WeightSet<double> WeightSet<T>::cast<double>() const;                                      \
  template std::vector<T> slowfast_fuse<T>(const WeightSet<T>&, const FeatureWindow&);                \
  template std::array<double, kOutputDim> forward_raw<T>(const WeightSet<T>&, const FeatureWindow&,   \
                                                         ForwardWorkspace<T>&);                       \
  template PoseOutput forward<T>(const WeightSet<T>&, const FeatureWindow&);                          \
  template void backward_accumulate<T>(const WeightSet<T>&, const ForwardWorkspace<T>&,               \
                                       std::span<const double, kOutputDim>, WeightSet<T>&);           \
  template WeightSet<T> backward<T>(const WeightSet<T>&, const FeatureWindow&,                        \
                                    std::span<const double, kOutputDim>);

EGOPOSE_INSTANTIATE(float)
EGOPOSE_INSTANTIATE(double)

#undef EGOPOSE_INSTANTIATE

}  // namespace egopose
