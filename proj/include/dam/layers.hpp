#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dam/tensor.hpp"

namespace dam {

FeatureMap relu_forward(const FeatureMap& x);
/// Passes gradient only where the cached input is strictly positive.
FeatureMap relu_backward(const FeatureMap& grad, const FeatureMap& cached_input);

/// Max pooling with a paired window-mean depth pooling on the same grid.
class MaxPool {
 public:
  MaxPool(std::size_t window, std::size_t stride);

  std::size_t window() const { return window_; }
  std::size_t stride() const { return stride_; }

  /// Ties go to the smallest linear index inside the window.
  FeatureMap forward(const FeatureMap& x);
  DepthMap forward_depth(const DepthMap& depth) const;
  /// Routes each pooled gradient to the cached argmax position.
  FeatureMap backward(const FeatureMap& grad) const;

  /// Linear (m * w + n) input index chosen for each output element.
  const std::vector<std::size_t>& argmax() const { return argmax_; }
  /// Smallest gap between a window's max and its runner-up in the last forward.
  Real min_tie_margin() const { return min_margin_; }

 private:
  std::size_t window_;
  std::size_t stride_;
  std::size_t in_c_ = 0, in_h_ = 0, in_w_ = 0;
  std::size_t out_h_ = 0, out_w_ = 0;
  std::vector<std::size_t> argmax_;
  Real min_margin_ = 0;
  bool cached_ = false;
};

/// Per-pixel softmax across channels, max-subtracted.
FeatureMap softmax(const FeatureMap& logits);

struct LossConfig {
  bool normalize = true;  // divide by h * w
  Real lambda = 0.0005;   // weight-decay factor
  std::optional<std::int32_t> ignore_label;
};

struct LossResult {
  Real loss = 0;
  FeatureMap grad_logits;  // d(loss)/d(pre-softmax logits)
  std::size_t counted_pixels = 0;
};

/// Multinomial logistic loss of softmax probabilities and its gradient with
/// respect to the logits that produced them, (prob - onehot) / N.
LossResult logistic_loss(const FeatureMap& prob, const LabelMap& labels, const LossConfig& cfg);

/// 1/2 * sum of squared weights over every tensor given.
Real l2_penalty(std::span<const WeightTensor* const> weights);

}  // namespace dam
