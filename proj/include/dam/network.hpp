#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dam/dam_conv.hpp"
#include "dam/layers.hpp"
#include "dam/optim.hpp"
#include "dam/tensor.hpp"

namespace dam {

/// How a convolution derives its sparsity map.
enum class SparsityMode {
  adaptive,  // from the (pooled) depth map
  fixed,     // as if every pixel sat at reference_depth
  dense,     // S = 1 everywhere
};

struct ConvLayerSpec {
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::vector<Real> scale_groups{1.0};  // s_r values, spread over input channels in contiguous groups
  std::int32_t q = 1;
  std::int32_t s_max = 16;
  bool depth_diff = false;
  Activation activation = Activation::relu;
  SparsityMode mode = SparsityMode::adaptive;
  std::optional<Real> reference_depth;      // fixed mode; defaults to the network mean depth
  std::optional<std::int32_t> pool_product; // if given, must equal the derived value
};

struct PoolLayerSpec {
  std::size_t window = 2;
  std::size_t stride = 2;
};

using LayerSpec = std::variant<ConvLayerSpec, PoolLayerSpec>;

enum class InputSource { depth, synthetic_intensity };

struct NetworkSpec {
  std::size_t input_channels = 1;
  InputSource source = InputSource::depth;
  std::vector<LayerSpec> layers;  // the softmax + loss head is implicit after the last entry
  LossConfig loss;
  Real mean_depth = 1000;

  /// Throws a descriptive Error on any structural problem.
  void validate() const;
  std::size_t classes() const;
  std::size_t total_stride() const;
};

/// Loss split of e = e_a + lambda * e_b.
struct LossBreakdown {
  Real total = 0;
  Real data = 0;
  Real regularization = 0;
};

struct SampleGradients {
  Real data_loss = 0;
  std::vector<std::vector<Real>> params;  // one block per parameter tensor, see parameter_names()
  FeatureMap input;
};

struct Sample {
  FeatureMap input;
  DepthMap depth;
  LabelMap labels;
};

struct TrainRecord {
  std::int64_t iter = 0;
  Real loss = 0;
  Real data_loss = 0;
  Real reg_loss = 0;
  Real lr = 0;
  std::optional<Real> validation;
  double wall_seconds = 0;
};

class Network {
 public:
  /// Seeded uniform(-a, a) weights with a = sqrt(3 / fan_in); zero biases.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t classes() const { return spec_.classes(); }

  /// Class probabilities at the output resolution. Caches everything backward() needs.
  FeatureMap forward(const FeatureMap& input, const DepthMap& depth);
  const FeatureMap& logits() const { return logits_; }

  /// forward, data loss, and gradients of e_a (no weight decay) for every parameter and the input.
  SampleGradients forward_backward(const FeatureMap& input, const DepthMap& depth, const LabelMap& labels);

  /// lambda * e_b over all conv weights.
  Real regularization() const;
  /// Total loss of one sample without touching gradients.
  LossBreakdown evaluate_loss(const FeatureMap& input, const DepthMap& depth, const LabelMap& labels);

  std::vector<std::span<Real>> parameter_blocks();
  std::vector<std::span<const Real>> parameter_blocks() const;
  std::vector<std::string> parameter_names() const;
  /// Block indices that hold conv weights (and therefore receive weight decay).
  std::vector<bool> decayed_blocks() const;

  std::vector<DamConv*> conv_layers();
  std::vector<const DamConv*> conv_layers() const;
  /// Depth map handed to each conv layer in the last forward (after pooling).
  const std::vector<DepthMap>& conv_depths() const { return conv_depths_; }
  /// Smallest distance of the last forward from a ReLU kink or a max-pool tie.
  Real min_kink_margin() const;

 private:
  using Layer = std::variant<DamConv, MaxPool>;

  FeatureMap backward(const FeatureMap& grad_logits, std::vector<std::vector<Real>>& grads);

  NetworkSpec spec_;
  std::vector<Layer> layers_;
  std::vector<DepthMap> conv_depths_;
  FeatureMap logits_;
};

/// Mean of per-sample e_a gradients, plus lambda * W once, then one momentum step.
/// Samples run on up to DAM_THREADS workers; the reduction order is fixed.
TrainRecord train_step(Network& net, std::span<const Sample* const> batch, Sgd& optimizer);

/// Worker cap from DAM_THREADS (defaults to hardware concurrency, at least 1).
std::size_t worker_count();

}  // namespace dam
