#include "dam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dam {

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width, Real fill)
    : channels_(channels), height_(height), width_(width), values_(channels * height * width, fill) {}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width,
                       std::vector<Real> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != channels * height * width) {
    throw Error("FeatureMap: value count " + std::to_string(values_.size()) + " does not match " +
                shape_string());
  }
}

Real FeatureMap::at_padded(std::size_t r, std::ptrdiff_t m, std::ptrdiff_t n) const {
  if (r >= channels_) {
    throw Error("FeatureMap: channel " + std::to_string(r) + " out of range for " + shape_string());
  }
  if (!in_bounds(m, n)) return 0;
  return (*this)(r, static_cast<std::size_t>(m), static_cast<std::size_t>(n));
}

bool FeatureMap::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](Real v) { return std::isfinite(v); });
}

std::string FeatureMap::shape_string() const {
  std::ostringstream os;
  os << channels_ << "x" << height_ << "x" << width_;
  return os.str();
}

WeightTensor::WeightTensor(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_h,
                           std::size_t kernel_w, Real fill)
    : out_(out_channels), in_(in_channels), kh_(kernel_h), kw_(kernel_w),
      values_(out_channels * in_channels * kernel_h * kernel_w, fill) {
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw Error("WeightTensor: kernel sides must be odd, got " + std::to_string(kernel_h) + "x" +
                std::to_string(kernel_w));
  }
}

DepthMap::DepthMap(std::size_t height, std::size_t width, Real fill, Real hole_value)
    : height_(height), width_(width), depths_(height * width, fill), hole_value_(hole_value) {}

DepthMap::DepthMap(std::size_t height, std::size_t width, std::vector<Real> depths, Real hole_value)
    : height_(height), width_(width), depths_(std::move(depths)), hole_value_(hole_value) {
  if (depths_.size() != height * width) {
    throw Error("DepthMap: value count does not match " + std::to_string(height) + "x" +
                std::to_string(width));
  }
  for (Real d : depths_) {
    if (d != hole_value_ && !(d > 0)) {
      throw Error("DepthMap: non-hole depth must be strictly positive");
    }
  }
}

bool DepthMap::has_holes() const {
  return std::any_of(depths_.begin(), depths_.end(), [&](Real d) { return d == hole_value_; });
}

LabelMap::LabelMap(std::size_t height, std::size_t width, std::int32_t fill,
                   std::optional<std::int32_t> ignore_label)
    : height_(height), width_(width), labels_(height * width, fill), ignore_label_(ignore_label) {}

LabelMap::LabelMap(std::size_t height, std::size_t width, std::vector<std::int32_t> labels,
                   std::optional<std::int32_t> ignore_label)
    : height_(height), width_(width), labels_(std::move(labels)), ignore_label_(ignore_label) {
  if (labels_.size() != height * width) {
    throw Error("LabelMap: value count does not match " + std::to_string(height) + "x" +
                std::to_string(width));
  }
}

void LabelMap::validate(std::size_t classes) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (is_ignored(i)) continue;
    if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= classes) {
      throw Error("LabelMap: label " + std::to_string(labels_[i]) + " at index " +
                  std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

namespace {

// Nearest measured pixel by growing square rings; a hit at Chebyshev radius k can
// still be beaten by something up to radius ceil(k * sqrt(2)).
std::size_t nearest_valid_index(const DepthMap& d, std::size_t hole) {
  const auto h = static_cast<std::ptrdiff_t>(d.height());
  const auto w = static_cast<std::ptrdiff_t>(d.width());
  const auto m0 = static_cast<std::ptrdiff_t>(hole) / w;
  const auto n0 = static_cast<std::ptrdiff_t>(hole) % w;
  const std::ptrdiff_t max_radius = std::max(h, w);

  std::ptrdiff_t best_dist2 = std::numeric_limits<std::ptrdiff_t>::max();
  std::size_t best = 0;
  std::ptrdiff_t limit = max_radius;
  for (std::ptrdiff_t k = 1; k <= limit; ++k) {
    for (std::ptrdiff_t dm = -k; dm <= k; ++dm) {
      for (std::ptrdiff_t dn = -k; dn <= k; ++dn) {
        if (std::max(std::abs(dm), std::abs(dn)) != k) continue;
        const auto m = m0 + dm;
        const auto n = n0 + dn;
        if (m < 0 || n < 0 || m >= h || n >= w) continue;
        const auto idx = static_cast<std::size_t>(m * w + n);
        if (d.is_hole(idx)) continue;
        const auto dist2 = dm * dm + dn * dn;
        if (dist2 < best_dist2 || (dist2 == best_dist2 && idx < best)) {
          best_dist2 = dist2;
          best = idx;
        }
      }
    }
    if (best_dist2 != std::numeric_limits<std::ptrdiff_t>::max() && limit == max_radius) {
      limit = std::min(max_radius,
                       static_cast<std::ptrdiff_t>(std::ceil(static_cast<double>(k) * std::sqrt(2.0))));
    }
  }
  return best;
}

}  // namespace

DepthMap fill_holes(const DepthMap& depth, HoleFill strategy) {
  DepthMap out = depth;
  if (!depth.has_holes()) return out;

  if (const auto* c = std::get_if<ConstantFill>(&strategy)) {
    if (!(c->value > 0) || c->value == depth.hole_value()) {
      throw Error("fill_holes: constant fill must be positive and differ from the hole marker");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (depth.is_hole(i)) out.values()[i] = c->value;
    }
    return out;
  }

  if (depth.size() == 0 ||
      std::all_of(depth.values().begin(), depth.values().end(),
                  [&](Real d) { return d == depth.hole_value(); })) {
    throw Error("fill_holes: nearest-valid fill needs at least one measured pixel");
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (depth.is_hole(i)) out.values()[i] = depth.values()[nearest_valid_index(depth, i)];
  }
  return out;
}

std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride) {
  const std::size_t w = std::min(window, in);
  return (in - w + stride - 1) / stride + 1;
}

DepthMap pool_depth(const DepthMap& depth, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw Error("pool_depth: window and stride must be >= 1");
  if (window > depth.height() && window > depth.width()) {
    throw Error("pool_depth: window " + std::to_string(window) + " larger than the " +
                std::to_string(depth.height()) + "x" + std::to_string(depth.width()) + " input");
  }
  if (depth.has_holes()) throw Error("pool_depth: depth map has holes; fill them first");

  const std::size_t oh = pooled_extent(depth.height(), window, stride);
  const std::size_t ow = pooled_extent(depth.width(), window, stride);
  DepthMap out(oh, ow, 0, depth.hole_value());
  for (std::size_t om = 0; om < oh; ++om) {
    const std::size_t m_begin = om * stride;
    const std::size_t m_end = std::min(m_begin + window, depth.height());
    for (std::size_t on = 0; on < ow; ++on) {
      const std::size_t n_begin = on * stride;
      const std::size_t n_end = std::min(n_begin + window, depth.width());
      Real sum = 0;
      for (std::size_t m = m_begin; m < m_end; ++m) {
        for (std::size_t n = n_begin; n < n_end; ++n) sum += depth(m, n);
      }
      out(om, on) = sum / static_cast<Real>((m_end - m_begin) * (n_end - n_begin));
    }
  }
  return out;
}

}  // namespace dam
