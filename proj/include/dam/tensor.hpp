#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace dam {

using Real = double;

/// Raised for shape mismatches, bad configuration and invalid arguments.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a computation produces a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Dense channels x height x width activations, channel-major then row-major.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width, Real fill = 0);
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width, std::vector<Real> values);

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  std::size_t plane() const { return height_ * width_; }

  Real& operator()(std::size_t r, std::size_t m, std::size_t n) {
    return values_[(r * height_ + m) * width_ + n];
  }
  Real operator()(std::size_t r, std::size_t m, std::size_t n) const {
    return values_[(r * height_ + m) * width_ + n];
  }

  /// Zero-padded read: any (m, n) outside the grid yields 0. Throws on a bad channel.
  Real at_padded(std::size_t r, std::ptrdiff_t m, std::ptrdiff_t n) const;

  bool in_bounds(std::ptrdiff_t m, std::ptrdiff_t n) const {
    return m >= 0 && n >= 0 && m < static_cast<std::ptrdiff_t>(height_) &&
           n < static_cast<std::ptrdiff_t>(width_);
  }

  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }
  std::span<Real> channel(std::size_t r) { return std::span<Real>(values_).subspan(r * plane(), plane()); }
  std::span<const Real> channel(std::size_t r) const {
    return std::span<const Real>(values_).subspan(r * plane(), plane());
  }

  bool same_shape(const FeatureMap& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Real> values_;
};

/// Convolution kernel bank: out_channels x in_channels x kernel_h x kernel_w, odd kernel sides.
class WeightTensor {
 public:
  WeightTensor() = default;
  WeightTensor(std::size_t out_channels, std::size_t in_channels, std::size_t kernel_h,
               std::size_t kernel_w, Real fill = 0);

  std::size_t out_channels() const { return out_; }
  std::size_t in_channels() const { return in_; }
  std::size_t kernel_h() const { return kh_; }
  std::size_t kernel_w() const { return kw_; }
  std::size_t size() const { return values_.size(); }
  /// Number of inputs feeding one output unit.
  std::size_t fan_in() const { return in_ * kh_ * kw_; }

  // i, j are 0-based tap rows/cols; the kernel offset is (i - kh/2, j - kw/2).
  Real& operator()(std::size_t t, std::size_t r, std::size_t i, std::size_t j) {
    return values_[((t * in_ + r) * kh_ + i) * kw_ + j];
  }
  Real operator()(std::size_t t, std::size_t r, std::size_t i, std::size_t j) const {
    return values_[((t * in_ + r) * kh_ + i) * kw_ + j];
  }

  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }

  friend bool operator==(const WeightTensor&, const WeightTensor&) = default;

 private:
  std::size_t out_ = 0;
  std::size_t in_ = 0;
  std::size_t kh_ = 0;
  std::size_t kw_ = 0;
  std::vector<Real> values_;
};

/// Per-pixel depth in millimetres. Pixels equal to hole_value carry no measurement.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(std::size_t height, std::size_t width, Real fill = 0, Real hole_value = 0);
  DepthMap(std::size_t height, std::size_t width, std::vector<Real> depths, Real hole_value = 0);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return depths_.size(); }
  Real hole_value() const { return hole_value_; }

  Real& operator()(std::size_t m, std::size_t n) { return depths_[m * width_ + n]; }
  Real operator()(std::size_t m, std::size_t n) const { return depths_[m * width_ + n]; }

  bool is_hole(std::size_t index) const { return depths_[index] == hole_value_; }
  bool has_holes() const;

  std::span<Real> values() { return depths_; }
  std::span<const Real> values() const { return depths_; }

  friend bool operator==(const DepthMap&, const DepthMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Real> depths_;
  Real hole_value_ = 0;
};

/// Per-pixel class indices. Pixels equal to ignore_label are excluded from loss and metrics.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, std::int32_t fill = 0,
           std::optional<std::int32_t> ignore_label = std::nullopt);
  LabelMap(std::size_t height, std::size_t width, std::vector<std::int32_t> labels,
           std::optional<std::int32_t> ignore_label = std::nullopt);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return labels_.size(); }
  std::optional<std::int32_t> ignore_label() const { return ignore_label_; }
  void set_ignore_label(std::optional<std::int32_t> label) { ignore_label_ = label; }

  std::int32_t& operator()(std::size_t m, std::size_t n) { return labels_[m * width_ + n]; }
  std::int32_t operator()(std::size_t m, std::size_t n) const { return labels_[m * width_ + n]; }

  bool is_ignored(std::size_t index) const {
    return ignore_label_ && labels_[index] == *ignore_label_;
  }
  /// Throws unless every non-ignored label lies in [0, classes).
  void validate(std::size_t classes) const;

  std::span<std::int32_t> values() { return labels_; }
  std::span<const std::int32_t> values() const { return labels_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::int32_t> labels_;
  std::optional<std::int32_t> ignore_label_;
};

struct NearestValid {};
struct ConstantFill {
  Real value;
};
using HoleFill = std::variant<NearestValid, ConstantFill>;

/// Replace hole pixels. NearestValid picks the Euclidean-nearest measured pixel,
/// ties going to the smaller linear index.
DepthMap fill_holes(const DepthMap& depth, HoleFill strategy = NearestValid{});

/// Output extent of a pooling grid along one axis: ceil((in - window) / stride) + 1,
/// with the window clipped to the axis length.
std::size_t pooled_extent(std::size_t in, std::size_t window, std::size_t stride);

/// Window-mean pooling of a hole-free depth map on the same grid max pooling uses.
DepthMap pool_depth(const DepthMap& depth, std::size_t window, std::size_t stride);

}  // namespace dam
