#include "dam/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dam {

FeatureMap relu_forward(const FeatureMap& x) {
  FeatureMap y = x;
  for (Real& v : y.values()) v = std::max(v, Real{0});
  return y;
}

FeatureMap relu_backward(const FeatureMap& grad, const FeatureMap& cached_input) {
  if (!grad.same_shape(cached_input)) throw Error("relu_backward: shape mismatch");
  FeatureMap g = grad;
  auto x = cached_input.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i) {
    if (x[i] <= 0) gv[i] = 0;
  }
  return g;
}

MaxPool::MaxPool(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {
  if (window == 0 || stride == 0) throw Error("MaxPool: window and stride must be >= 1");
}

FeatureMap MaxPool::forward(const FeatureMap& x) {
  if (window_ > x.height() && window_ > x.width()) {
    throw Error("MaxPool: window " + std::to_string(window_) + " larger than input " + x.shape_string());
  }
  in_c_ = x.channels();
  in_h_ = x.height();
  in_w_ = x.width();
  out_h_ = pooled_extent(in_h_, window_, stride_);
  out_w_ = pooled_extent(in_w_, window_, stride_);
  FeatureMap y(in_c_, out_h_, out_w_);
  argmax_.assign(y.size(), 0);
  min_margin_ = std::numeric_limits<Real>::infinity();

  for (std::size_t c = 0; c < in_c_; ++c) {
    for (std::size_t om = 0; om < out_h_; ++om) {
      const std::size_t m_end = std::min(om * stride_ + window_, in_h_);
      for (std::size_t on = 0; on < out_w_; ++on) {
        const std::size_t n_end = std::min(on * stride_ + window_, in_w_);
        Real best = -std::numeric_limits<Real>::infinity();
        Real second = -std::numeric_limits<Real>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t m = om * stride_; m < m_end; ++m) {
          for (std::size_t n = on * stride_; n < n_end; ++n) {
            const Real v = x(c, m, n);
            if (v > best) {
              second = best;
              best = v;
              best_idx = m * in_w_ + n;
            } else if (v > second) {
              second = v;
            }
          }
        }
        const std::size_t out_idx = (c * out_h_ + om) * out_w_ + on;
        y.values()[out_idx] = best;
        argmax_[out_idx] = best_idx;
        if (std::isfinite(second)) min_margin_ = std::min(min_margin_, best - second);
      }
    }
  }
  cached_ = true;
  return y;
}

DepthMap MaxPool::forward_depth(const DepthMap& depth) const {
  return pool_depth(depth, window_, stride_);
}

FeatureMap MaxPool::backward(const FeatureMap& grad) const {
  if (!cached_) throw Error("MaxPool: backward called before forward");
  if (grad.channels() != in_c_ || grad.height() != out_h_ || grad.width() != out_w_) {
    throw Error("MaxPool: gradient " + grad.shape_string() + " does not match pooled output");
  }
  FeatureMap g(in_c_, in_h_, in_w_);
  for (std::size_t c = 0; c < in_c_; ++c) {
    auto dst = g.channel(c);
    for (std::size_t i = 0; i < out_h_ * out_w_; ++i) {
      const std::size_t out_idx = c * out_h_ * out_w_ + i;
      dst[argmax_[out_idx]] += grad.values()[out_idx];
    }
  }
  return g;
}

FeatureMap softmax(const FeatureMap& logits) {
  FeatureMap prob(logits.channels(), logits.height(), logits.width());
  const std::size_t hw = logits.plane();
  for (std::size_t p = 0; p < hw; ++p) {
    Real max_logit = -std::numeric_limits<Real>::infinity();
    for (std::size_t r = 0; r < logits.channels(); ++r) {
      max_logit = std::max(max_logit, logits.values()[r * hw + p]);
    }
    Real denom = 0;
    for (std::size_t r = 0; r < logits.channels(); ++r) {
      const Real e = std::exp(logits.values()[r * hw + p] - max_logit);
      prob.values()[r * hw + p] = e;
      denom += e;
    }
    for (std::size_t r = 0; r < logits.channels(); ++r) prob.values()[r * hw + p] /= denom;
  }
  return prob;
}

LossResult logistic_loss(const FeatureMap& prob, const LabelMap& labels, const LossConfig& cfg) {
  if (prob.height() != labels.height() || prob.width() != labels.width()) {
    throw Error("logistic_loss: probabilities " + prob.shape_string() + " vs labels " +
                std::to_string(labels.height()) + "x" + std::to_string(labels.width()));
  }
  LabelMap effective = labels;
  if (cfg.ignore_label) effective.set_ignore_label(cfg.ignore_label);
  effective.validate(prob.channels());

  const std::size_t hw = prob.plane();
  const Real norm = cfg.normalize ? static_cast<Real>(hw) : Real{1};
  LossResult result{0, FeatureMap(prob.channels(), prob.height(), prob.width()), 0};
  for (std::size_t p = 0; p < hw; ++p) {
    if (effective.is_ignored(p)) continue;
    ++result.counted_pixels;
    const auto label = static_cast<std::size_t>(effective.values()[p]);
    // Floor at the smallest normal double so an underflowed probability stays finite.
    result.loss -= std::log(std::max(prob.values()[label * hw + p], std::numeric_limits<Real>::min()));
    for (std::size_t r = 0; r < prob.channels(); ++r) {
      const Real onehot = r == label ? Real{1} : Real{0};
      result.grad_logits.values()[r * hw + p] = (prob.values()[r * hw + p] - onehot) / norm;
    }
  }
  result.loss /= norm;
  return result;
}

Real l2_penalty(std::span<const WeightTensor* const> weights) {
  Real sum = 0;
  for (const auto* w : weights) {
    for (Real v : w->values()) sum += v * v;
  }
  return 0.5 * sum;
}

}  // namespace dam
