// SlowFast-fused transformer encoder that maps a feature window to the pose
// and shape of its last frame.
//
//   window (tau x 59)
//     -> SLOW = frames 0, 2, ..., tau-2      FAST = frames tau/2 .. tau-1
//     -> token i = [embed_slow(SLOW_i) | embed_fast(FAST_i)]   (tau/2 tokens)
//     -> + sinusoidal positional encoding
//     -> num_layers x pre-norm block:
//          x += Wo * MHA(LN1(x));  x += W2 * GELU(W1 * LN2(x))
//     -> LN(last token) -> linear head (148 = 6 + 21*6 + 16)
//
// The "plain" variant (slowfast = false) embeds every frame with a single
// 59 -> 2*embed_dim projection and keeps tau tokens; it exists for the
// FLOP-parity comparison.
//
// Scalar type T is float for inference/training and double for gradient
// checks. Only float and double are instantiated.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "egopose/features.hpp"
#include "egopose/skeleton.hpp"

namespace egopose {

inline constexpr int kOutputDim = 6 + kNumLocalJoints * 6 + kNumBetas;
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct ModelConfig {
  int tau = kDefaultWindow;
  int feature_dim = kFeatureDim;
  int embed_dim = 128;  // per stream; tokens are 2 * embed_dim wide
  int num_layers = 3;
  int num_heads = 8;
  int mlp_hidden = 2048;
  bool slowfast = true;
  FeatureMode feature_mode = FeatureMode::kDecomposed;
  std::uint64_t seed = 0;

  int token_count() const { return slowfast ? tau / 2 : tau; }
  int token_dim() const { return 2 * embed_dim; }
  int head_dim() const { return token_dim() / num_heads; }

  /// Throws kOddWindow or kInvalidArgument.
  void validate() const;

  std::string to_json_text() const;
  static ModelConfig from_json_text(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Decoded network output. Rotations are raw 6D values.
struct PoseOutput {
  Rot6D root_orientation;
  std::array<Rot6D, kNumLocalJoints> local_rotations{};
  ShapeParams beta{};

  static PoseOutput from_vector(std::span<const double, kOutputDim> v);
  std::array<double, kOutputDim> to_vector() const;
};

/// Cache-line aligned storage. Vectorized reductions peel a different number
/// of leading elements depending on where a buffer starts, so a fixed base
/// alignment is what makes results independent of heap layout.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Tensor {
  int rows = 0;
  int cols = 0;
  AlignedVector<T> data;

  std::size_t size() const { return data.size(); }
};

/// Named parameter tensors in a fixed order, plus the config they belong to.
template <typename T>
class WeightSet {
 public:
  WeightSet() = default;
  /// Zero-filled tensors with the shapes implied by config.
  explicit WeightSet(const ModelConfig& config);

  /// Seeded initialization: Xavier-uniform matrices, zero biases, unit norm
  /// gains, and a head bias that decodes to identity rotations.
  static WeightSet initialized(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  int layout_version() const { return layout_version_; }

  std::size_t tensor_count() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& tensor(std::size_t i) const { return tensors_[i]; }
  Tensor<T>& operator[](const std::string& name);
  const Tensor<T>& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t parameter_count() const;
  void set_zero();
  /// this += scale * other (same layout required).
  void add_scaled(const WeightSet& other, T scale);

  template <typename U>
  WeightSet<U> cast() const;

  friend bool operator==(const WeightSet& a, const WeightSet& b) {
    if (!(a.config_ == b.config_) || a.names_ != b.names_) return false;
    for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
      if (a.tensors_[i].data != b.tensors_[i].data) return false;
    }
    return true;
  }

 private:
  template <typename U>
  friend class WeightSet;
  void add(const std::string& name, int rows, int cols);

  ModelConfig config_;
  int layout_version_ = kFeatureLayoutVersion;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Intermediate activations kept by forward() for backward().
template <typename T>
struct ForwardCache;

/// Owns a cache so repeated calls reuse their buffers.
template <typename T>
class ForwardWorkspace {
 public:
  ForwardWorkspace();
  ~ForwardWorkspace();
  ForwardWorkspace(ForwardWorkspace&&) noexcept;
  ForwardWorkspace& operator=(ForwardWorkspace&&) noexcept;

  ForwardCache<T>& cache() { return *cache_; }
  const ForwardCache<T>& cache() const { return *cache_; }

  /// Row-stochastic attention matrix of one layer/head after the last forward.
  std::vector<T> attention(int layer, int head) const;

 private:
  std::unique_ptr<ForwardCache<T>> cache_;
};

/// Token matrix (token_count x token_dim, row-major) before positional
/// encoding. Throws kOddWindow for odd tau in SlowFast mode.
template <typename T>
std::vector<T> slowfast_fuse(const WeightSet<T>& weights, const FeatureWindow& window);

/// Frame indices feeding each token: (slow_frame, fast_frame) pairs.
std::vector<std::pair<int, int>> slowfast_pairs(int tau);

template <typename T>
std::array<double, kOutputDim> forward_raw(const WeightSet<T>& weights, const FeatureWindow& window,
                                           ForwardWorkspace<T>& workspace);

template <typename T>
PoseOutput forward(const WeightSet<T>& weights, const FeatureWindow& window);

/// Accumulates d(output . output_gradient)/d(params) into gradient, using the
/// activations left in workspace by the preceding forward_raw call.
template <typename T>
void backward_accumulate(const WeightSet<T>& weights, const ForwardWorkspace<T>& workspace,
                         std::span<const double, kOutputDim> output_gradient, WeightSet<T>& gradient);

/// Convenience: forward + backward into a fresh gradient set.
template <typename T>
WeightSet<T> backward(const WeightSet<T>& weights, const FeatureWindow& window,
                      std::span<const double, kOutputDim> output_gradient);

// -- analytic cost model -------------------------------------------------------
//
// FLOPs = 2 x multiply-accumulates of every matrix product:
//   embedding      tokens * 59 * token_dim
//   per layer      qkv 3*n*D^2 + out n*D^2 + scores n^2*D + mix n^2*D
//                  + mlp 2*n*D*H
//   head           D * 148 (last token only)
// Norms, softmax, GELU and positional encoding are not counted.

struct FlopCount {
  std::uint64_t embedding = 0;
  std::uint64_t attention_linear = 0;  // qkv + output projections, all layers
  std::uint64_t attention_scores = 0;  // QK^T and PV, all layers
  std::uint64_t mlp = 0;
  std::uint64_t head = 0;

  std::uint64_t encoder() const { return attention_linear + attention_scores + mlp; }
  std::uint64_t total() const { return embedding + encoder() + head; }
};

FlopCount count_flops(const ModelConfig& config);
std::size_t count_params(const ModelConfig& config);

// -- weight files --------------------------------------------------------------
//
// Layout (little-endian):
//   "EPWT" | u32 format_version | u32 feature_layout_version
//   | u32 json_bytes | config JSON | u32 tensor_count
//   | per tensor: u32 name_bytes | name | u32 rows | u32 cols | f32 data
// Tensors whose names start with "optimizer." belong to training
// checkpoints and are skipped by load_weights.

void save_weights(const WeightSet<float>& weights, const std::filesystem::path& path,
                  std::string_view extra_json = {},
                  const std::vector<std::pair<std::string, Tensor<float>>>& extra_tensors = {});

struct WeightFile {
  WeightSet<float> weights;
  std::string extra_json;
  std::vector<std::pair<std::string, Tensor<float>>> extra_tensors;
};

WeightFile load_weight_file(const std::filesystem::path& path);
WeightSet<float> load_weights(const std::filesystem::path& path);

}  // namespace egopose
