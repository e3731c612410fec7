#pragma once

// Encoder-decoder segmentation network: 3x3 conv + batch norm + ReLU blocks,
// 2x2 max-pool downsampling, 2x2 stride-2 transposed-convolution
// upsampling, skip concatenation and a 1x1 logistic head.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "startopo/grid.hpp"

namespace startopo {

struct NetworkConfig {
  int levels = 4;
  int base_channels = 16;
  int kernel_size = 3;
  std::string upsample = "transposed_conv";
  std::string normalization = "batch_norm";
  std::string activation = "relu";
  std::string output = "sigmoid";

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;

  /// Channel width at resolution level k (k == levels is the bottleneck).
  int channels(int level) const { return base_channels << level; }

  void validate() const;
  /// Throws DimensionError naming the first level whose input is not
  /// divisible by two.
  void check_input(std::size_t height, std::size_t width) const;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  // Batch-norm running statistics are stored but not optimized.
  bool learnable = true;
};

/// Named parameter blocks in a fixed creation order.
class ModelParams {
 public:
  ParamBlock& add(std::string name, std::vector<int> shape, bool learnable);
  std::size_t index_of(const std::string& name) const;
  ParamBlock& at(const std::string& name) { return blocks_[index_of(name)]; }
  const ParamBlock& at(const std::string& name) const { return blocks_[index_of(name)]; }
  ParamBlock& operator[](std::size_t i) { return blocks_[i]; }
  const ParamBlock& operator[](std::size_t i) const { return blocks_[i]; }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  std::size_t learnable_scalars() const;
  void zero_grad();
  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<ParamBlock> blocks_;
};

/// Exact number of learnable scalars for `config`.
std::size_t count_params(const NetworkConfig& config);

enum class Mode { Train, Infer };

class SegNet {
 public:
  /// Builds the network and draws fan-in scaled uniform weights from `seed`.
  SegNet(const NetworkConfig& config, std::uint64_t seed);
  /// Adopts existing parameters; names and shapes must match the config.
  SegNet(const NetworkConfig& config, ModelParams params);
  ~SegNet();
  SegNet(SegNet&&) noexcept;
  SegNet& operator=(SegNet&&) noexcept;

  const NetworkConfig& config() const;
  ModelParams& params();
  const ModelParams& params() const;

  /// Runs the batch through the network. Train mode uses batch statistics,
  /// updates the running statistics and keeps activations for backward();
  /// Infer mode uses running statistics.
  std::vector<ProbabilityMap> forward(std::span<const NormalizedImage> batch, Mode mode);

  /// Accumulates parameter gradients given dLoss/dProbability for every
  /// sample of the last Train-mode forward pass.
  void backward(std::span<const RealGrid> grad_probs);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

void to_json(nlohmann::json& j, const AdamConfig& c);
void from_json(const nlohmann::json& j, AdamConfig& c);

/// Adaptive moment estimation with bias correction over learnable blocks.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config) : config_(config) {}
  void step(ModelParams& params);
  long steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

}  // namespace startopo
