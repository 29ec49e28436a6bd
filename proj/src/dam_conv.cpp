#include "dam/dam_conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace dam {
namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

auto as_matrix(std::span<const Real> data, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

auto as_matrix(std::span<Real> data, std::size_t rows, std::size_t cols) {
  return MatrixMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

void MultiscaleParams::validate(std::size_t channels) const {
  if (scales.size() != channels) {
    throw Error("MultiscaleParams: " + std::to_string(scales.size()) + " scales for " +
                std::to_string(channels) + " channels");
  }
  for (Real s : scales) {
    if (!(s > 0)) throw Error("MultiscaleParams: scaling factors must be positive");
  }
  if (!(mean_depth > 0)) throw Error("MultiscaleParams: mean depth must be positive");
  if (pool_product < 1) throw Error("MultiscaleParams: pool product must be >= 1");
  if (ancestor_dilation < 1) throw Error("MultiscaleParams: ancestor dilation must be >= 1");
  if (max_dilation < 1) throw Error("MultiscaleParams: dilation clamp must be >= 1");
}

MultiscaleParams MultiscaleParams::uniform(std::size_t channels, Real mean_depth) {
  MultiscaleParams p;
  p.scales.assign(channels, 1.0);
  p.mean_depth = mean_depth;
  return p;
}

std::vector<Real> expand_scale_groups(std::span<const Real> group_scales, std::size_t channels) {
  if (group_scales.empty()) throw Error("expand_scale_groups: no scaling factors given");
  if (group_scales.size() > channels) {
    throw Error("expand_scale_groups: " + std::to_string(group_scales.size()) +
                " groups do not fit in " + std::to_string(channels) + " channels");
  }
  std::vector<Real> out(channels);
  for (std::size_t r = 0; r < channels; ++r) out[r] = group_scales[r * group_scales.size() / channels];
  return out;
}

Real multiscale_p(const MultiscaleParams& params, std::size_t r) {
  if (r >= params.scales.size()) throw Error("multiscale_p: channel out of range");
  return params.scales[r] / static_cast<Real>(params.pool_product) * params.mean_depth *
         static_cast<Real>(params.ancestor_dilation);
}

SparsityMap::SparsityMap(std::size_t channels, std::size_t height, std::size_t width,
                         std::int32_t fill)
    : channels_(channels), height_(height), width_(width),
      dilations_(channels * height * width, fill) {}

SparsityMap compute_sparsity(const MultiscaleParams& params, const DepthMap& depth) {
  const std::size_t channels = params.scales.size();
  params.validate(channels);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth.is_hole(i) || !(depth.values()[i] > 0)) {
      throw Error("compute_sparsity: depth must be hole-free and strictly positive");
    }
  }
  SparsityMap s(channels, depth.height(), depth.width());
  const auto clamp_hi = static_cast<Real>(params.max_dilation);
  for (std::size_t r = 0; r < channels; ++r) {
    const Real p = multiscale_p(params, r);
    for (std::size_t m = 0; m < depth.height(); ++m) {
      for (std::size_t n = 0; n < depth.width(); ++n) {
        const Real rounded = std::floor(p / depth(m, n) + 0.5);
        s(r, m, n) = static_cast<std::int32_t>(std::clamp(rounded, Real{1}, clamp_hi));
      }
    }
  }
  return s;
}

DamConv::DamConv(WeightTensor weights, std::vector<Real> bias, MultiscaleParams params,
                 Activation activation, bool depth_diff)
    : weights_(std::move(weights)), bias_(std::move(bias)), params_(std::move(params)),
      activation_(activation), depth_diff_(depth_diff) {
  if (bias_.size() != weights_.out_channels()) {
    throw Error("DamConv: bias length " + std::to_string(bias_.size()) + " does not match " +
                std::to_string(weights_.out_channels()) + " output channels");
  }
  params_.validate(weights_.in_channels());
}

FeatureMap DamConv::forward(const FeatureMap& input, const DepthMap& depth) {
  if (depth.height() != input.height() || depth.width() != input.width()) {
    throw Error("DamConv: depth map " + std::to_string(depth.height()) + "x" +
                std::to_string(depth.width()) + " does not match input " + input.shape_string());
  }
  return forward_with_sparsity(input, compute_sparsity(params_, depth));
}

FeatureMap DamConv::forward_depth_diff(const FeatureMap& input, const DepthMap& depth) {
  if (!depth_diff_) throw Error("DamConv: layer is not in depth-difference mode");
  return forward(input, depth);
}

FeatureMap DamConv::forward_with_sparsity(const FeatureMap& input, SparsityMap sparsity) {
  if (input.channels() != weights_.in_channels()) {
    throw Error("DamConv: input " + input.shape_string() + " has wrong channel count, expected " +
                std::to_string(weights_.in_channels()));
  }
  if (sparsity.channels() != input.channels() || sparsity.height() != input.height() ||
      sparsity.width() != input.width()) {
    throw Error("DamConv: sparsity map does not match input " + input.shape_string());
  }
  for (auto s : sparsity.values()) {
    if (s < 1) throw Error("DamConv: sparsity entries must be >= 1");
  }
  input_ = input;
  sparsity_ = std::move(sparsity);
  build_columns();

  const std::size_t out = weights_.out_channels();
  const std::size_t hw = input.plane();
  FeatureMap output(out, input.height(), input.width());
  weight_buffer_.assign(weights_.values().begin(), weights_.values().end());
  preact_.resize(out * hw);
  auto pre = as_matrix(std::span<Real>(preact_), out, hw);
  pre.noalias() = as_matrix(std::span<const Real>(weight_buffer_), out, taps()) *
                  as_matrix(std::span<const Real>(columns_), taps(), hw);
  for (std::size_t t = 0; t < out; ++t) {
    auto row = std::span<Real>(preact_).subspan(t * hw, hw);
    auto dst = output.channel(t);
    for (std::size_t i = 0; i < hw; ++i) {
      row[i] += bias_[t];
      dst[i] = activation_ == Activation::relu ? std::max(row[i], Real{0}) : row[i];
    }
  }
  cached_ = true;
  return output;
}

void DamConv::build_columns() {
  const auto h = static_cast<std::ptrdiff_t>(input_.height());
  const auto w = static_cast<std::ptrdiff_t>(input_.width());
  const std::size_t hw = input_.plane();
  const std::size_t kh = weights_.kernel_h();
  const std::size_t kw = weights_.kernel_w();
  const auto half_h = static_cast<std::ptrdiff_t>(kh / 2);
  const auto half_w = static_cast<std::ptrdiff_t>(kw / 2);
  columns_.resize(taps() * hw);  // every entry is written below

  for (std::size_t r = 0; r < input_.channels(); ++r) {
    const Real* x = input_.channel(r).data();
    const std::int32_t* dil = sparsity_.values().data() + r * hw;
    for (std::size_t i = 0; i < kh; ++i) {
      const auto u = static_cast<std::ptrdiff_t>(i) - half_h;
      for (std::size_t j = 0; j < kw; ++j) {
        const auto v = static_cast<std::ptrdiff_t>(j) - half_w;
        Real* row = columns_.data() + ((r * kh + i) * kw + j) * hw;
        for (std::ptrdiff_t m = 0; m < h; ++m) {
          for (std::ptrdiff_t n = 0; n < w; ++n) {
            const std::ptrdiff_t at = m * w + n;
            const std::ptrdiff_t mm = m + dil[at] * u;
            const std::ptrdiff_t nn = n + dil[at] * v;
            if (mm < 0 || mm >= h || nn < 0 || nn >= w) {
              row[at] = 0;
            } else {
              row[at] = depth_diff_ ? x[mm * w + nn] - x[at] : x[mm * w + nn];
            }
          }
        }
      }
    }
  }
}

AlignedReals DamConv::preactivation_gradient(const FeatureMap& grad_out) const {
  if (!cached_) throw Error("DamConv: backward called before forward");
  if (grad_out.channels() != weights_.out_channels() || grad_out.height() != input_.height() ||
      grad_out.width() != input_.width()) {
    throw Error("DamConv: output gradient " + grad_out.shape_string() + " does not match the forward output");
  }
  AlignedReals g(grad_out.values().begin(), grad_out.values().end());
  if (activation_ == Activation::relu) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (preact_[i] <= 0) g[i] = 0;
    }
  }
  return g;
}

ConvGradients DamConv::backward_weights(const FeatureMap& grad_out, Real lambda) const {
  const auto g = preactivation_gradient(grad_out);
  const std::size_t out = weights_.out_channels();
  const std::size_t hw = input_.plane();

  ConvGradients grads{WeightTensor(out, weights_.in_channels(), weights_.kernel_h(), weights_.kernel_w()),
                      std::vector<Real>(out, 0)};
  AlignedReals gw_buffer(out * taps());
  auto gw = as_matrix(std::span<Real>(gw_buffer), out, taps());
  const auto gm = as_matrix(std::span<const Real>(g), out, hw);
  gw.noalias() = gm * as_matrix(std::span<const Real>(columns_), taps(), hw).transpose();
  gw += lambda * as_matrix(std::span<const Real>(weight_buffer_), out, taps());
  std::copy(gw_buffer.begin(), gw_buffer.end(), grads.weights.values().begin());
  for (std::size_t t = 0; t < out; ++t) grads.bias[t] = gm.row(static_cast<Eigen::Index>(t)).sum();
  return grads;
}

FeatureMap DamConv::backward_input(const FeatureMap& grad_out) const {
  const auto g = preactivation_gradient(grad_out);
  const std::size_t out = weights_.out_channels();
  const std::size_t h = input_.height();
  const std::size_t w = input_.width();
  const std::size_t hw = h * w;
  const std::size_t kh = weights_.kernel_h();
  const std::size_t kw = weights_.kernel_w();
  const auto half_h = static_cast<std::ptrdiff_t>(kh / 2);
  const auto half_w = static_cast<std::ptrdiff_t>(kw / 2);

  // Sum over output channels first: column_grad[(r,u,v), (m,n)] = sum_t W[t,r,u,v] * g[t,m,n].
  AlignedReals column_grad(taps() * hw);
  as_matrix(std::span<Real>(column_grad), taps(), hw).noalias() =
      as_matrix(std::span<const Real>(weight_buffer_), out, taps()).transpose() *
      as_matrix(std::span<const Real>(g), out, hw);

  FeatureMap grad_in(input_.channels(), h, w);
  const auto hi = static_cast<std::ptrdiff_t>(h);
  const auto wi = static_cast<std::ptrdiff_t>(w);
  for (std::size_t r = 0; r < input_.channels(); ++r) {
    Real* gx = grad_in.channel(r).data();
    const std::int32_t* dil = sparsity_.values().data() + r * hw;
    for (std::size_t i = 0; i < kh; ++i) {
      const auto u = static_cast<std::ptrdiff_t>(i) - half_h;
      for (std::size_t j = 0; j < kw; ++j) {
        const auto v = static_cast<std::ptrdiff_t>(j) - half_w;
        const Real* row = column_grad.data() + ((r * kh + i) * kw + j) * hw;
        for (std::ptrdiff_t m = 0; m < hi; ++m) {
          for (std::ptrdiff_t n = 0; n < wi; ++n) {
            const std::ptrdiff_t at = m * wi + n;
            const std::ptrdiff_t mm = m + dil[at] * u;
            const std::ptrdiff_t nn = n + dil[at] * v;
            if (mm < 0 || mm >= hi || nn < 0 || nn >= wi) continue;
            gx[mm * wi + nn] += row[at];
            if (depth_diff_) gx[at] -= row[at];
          }
        }
      }
    }
  }
  return grad_in;
}

Real DamConv::min_abs_preactivation() const {
  Real best = std::numeric_limits<Real>::infinity();
  for (Real v : preact_) best = std::min(best, std::abs(v));
  return best;
}

}  // namespace dam
