#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dam/tensor.hpp"

namespace dam {

/// counts(i, j): pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const { return classes_; }
  std::uint64_t operator()(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::uint64_t& operator()(std::size_t truth, std::size_t predicted) {
    return counts_[truth * classes_ + predicted];
  }
  std::uint64_t total() const;

  /// Adds one count per non-ignored truth pixel.
  void accumulate(const LabelMap& predicted, const LabelMap& truth);
  void merge(const ConfusionMatrix& other);

  std::string to_csv() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct MetricReport {
  Real pixel_accuracy = 0;
  Real mean_accuracy = 0;
  Real mean_iou = 0;
  Real fw_iou = 0;
  // Two-class runs only; class 1 is the foreground.
  std::optional<Real> precision;
  std::optional<Real> recall;
  std::optional<Real> f1;

  /// Aligned two-column text table.
  std::string to_table() const;
  /// JSON object text.
  std::string to_json() const;
};

/// Classes whose per-class denominator is zero are left out of the mean
/// accuracy and mean IoU averages.
MetricReport compute_all(const ConfusionMatrix& cm);

/// Per-pixel argmax over channels, ties to the lower class index.
LabelMap argmax_labels(const FeatureMap& scores);

}  // namespace dam
