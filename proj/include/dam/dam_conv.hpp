#pragma once

#include <cstdint>
#include <span>
#include <new>
#include <utility>
#include <vector>

#include "dam/tensor.hpp"

namespace dam {

/// Factors of the per-channel multiscale parameter p_r = (s_r / pool_product) * mean_depth * q.
struct MultiscaleParams {
  std::vector<Real> scales;       // s_r, one per input channel
  Real mean_depth = 1000;         // training-set mean depth, mm
  std::int32_t pool_product = 1;  // product of pooling strides below this layer
  std::int32_t ancestor_dilation = 1;
  std::int32_t max_dilation = 16;

  /// Throws unless the factors are positive and there is one scale per channel.
  void validate(std::size_t channels) const;

  /// Uniform scale 1 on every channel.
  static MultiscaleParams uniform(std::size_t channels, Real mean_depth = 1000);
};

/// Spread group scales over channels in contiguous, near-equal blocks
/// (channel r goes to group r * groups / channels).
std::vector<Real> expand_scale_groups(std::span<const Real> group_scales, std::size_t channels);

/// p_r in millimetres.
Real multiscale_p(const MultiscaleParams& params, std::size_t r);

/// 64-byte aligned storage. Eigen picks its vectorised loop split from the address, so
/// aligned operands keep the floating-point summation order, and the results, reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  // resize() leaves new elements uninitialised; every buffer is fully overwritten before use.
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    if constexpr (sizeof...(Args) == 0) {
      ::new (static_cast<void*>(p)) U;
    } else {
      ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
  }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

using AlignedReals = std::vector<Real, AlignedAllocator<Real>>;

/// Integer dilation per input channel and pixel.
class SparsityMap {
 public:
  SparsityMap() = default;
  SparsityMap(std::size_t channels, std::size_t height, std::size_t width, std::int32_t fill = 1);

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  std::int32_t& operator()(std::size_t r, std::size_t m, std::size_t n) {
    return dilations_[(r * height_ + m) * width_ + n];
  }
  std::int32_t operator()(std::size_t r, std::size_t m, std::size_t n) const {
    return dilations_[(r * height_ + m) * width_ + n];
  }

  std::span<const std::int32_t> values() const { return dilations_; }
  std::span<std::int32_t> values() { return dilations_; }

  /// Dilations as reals, e.g. for DAT1 or PGM export.
  std::vector<Real> as_reals() const { return {dilations_.begin(), dilations_.end()}; }

  friend bool operator==(const SparsityMap&, const SparsityMap&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::int32_t> dilations_;
};

/// S[r,m,n] = clamp(round_half_up(p_r / depth[m,n]), 1, max_dilation).
SparsityMap compute_sparsity(const MultiscaleParams& params, const DepthMap& depth);

enum class Activation { identity, relu };

struct ConvGradients {
  WeightTensor weights;
  std::vector<Real> bias;
};

/// Convolution whose tap spacing follows a per-channel, per-pixel sparsity map.
///
/// Output (t, m, n) reads input (r, m + S*u, n + S*v) with S = S[r, m, n] and
/// (u, v) the centred kernel offsets. Taps outside the grid read zero. In
/// depth-difference mode every in-bounds tap contributes X[tap] - X[r, m, n]
/// and out-of-bounds taps contribute zero.
///
/// forward() caches what the two backward passes need; S is treated as a
/// constant of the data, so no gradient flows through it.
class DamConv {
 public:
  DamConv() = default;
  DamConv(WeightTensor weights, std::vector<Real> bias, MultiscaleParams params,
          Activation activation = Activation::relu, bool depth_diff = false);

  const WeightTensor& weights() const { return weights_; }
  WeightTensor& weights() { return weights_; }
  const std::vector<Real>& bias() const { return bias_; }
  std::vector<Real>& bias() { return bias_; }
  const MultiscaleParams& params() const { return params_; }
  Activation activation() const { return activation_; }
  bool depth_diff() const { return depth_diff_; }

  /// Sparsity from depth, then the sparse convolution (depth-difference taps if enabled).
  FeatureMap forward(const FeatureMap& input, const DepthMap& depth);
  /// As forward(), but only valid for a layer built in depth-difference mode.
  FeatureMap forward_depth_diff(const FeatureMap& input, const DepthMap& depth);
  /// Forward with an explicit sparsity map.
  FeatureMap forward_with_sparsity(const FeatureMap& input, SparsityMap sparsity);

  /// grad_out is dE/d(output). Adds lambda * W to the weight gradient.
  ConvGradients backward_weights(const FeatureMap& grad_out, Real lambda) const;
  /// dE/d(input), scattering every tap's contribution back to the position it read.
  FeatureMap backward_input(const FeatureMap& grad_out) const;

  bool has_cache() const { return cached_; }
  const FeatureMap& cached_input() const { return input_; }
  const SparsityMap& cached_sparsity() const { return sparsity_; }
  /// Smallest |pre-activation| of the last forward; used to steer clear of ReLU kinks.
  Real min_abs_preactivation() const;

 private:
  std::size_t taps() const { return weights_.fan_in(); }
  void build_columns();
  AlignedReals preactivation_gradient(const FeatureMap& grad_out) const;

  WeightTensor weights_;
  std::vector<Real> bias_;
  MultiscaleParams params_;
  Activation activation_ = Activation::relu;
  bool depth_diff_ = false;

  bool cached_ = false;
  FeatureMap input_;
  SparsityMap sparsity_;
  AlignedReals weight_buffer_;  // aligned copy of the weights for the GEMMs
  AlignedReals columns_;        // (in * kh * kw) x (h * w), row-major
  AlignedReals preact_;         // out x (h * w)
};

}  // namespace dam
