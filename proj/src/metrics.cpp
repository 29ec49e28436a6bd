#include "dam/metrics.hpp"

#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

namespace dam {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw Error("ConfusionMatrix: need at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::accumulate(const LabelMap& predicted, const LabelMap& truth) {
  if (predicted.height() != truth.height() || predicted.width() != truth.width()) {
    throw Error("ConfusionMatrix: prediction and truth sizes differ");
  }
  truth.validate(classes_);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth.is_ignored(i)) continue;
    const auto p = predicted.values()[i];
    if (p < 0 || static_cast<std::size_t>(p) >= classes_) {
      throw Error("ConfusionMatrix: predicted label " + std::to_string(p) + " out of range");
    }
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth.is_ignored(i)) continue;
    ++(*this)(static_cast<std::size_t>(truth.values()[i]), static_cast<std::size_t>(predicted.values()[i]));
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw Error("ConfusionMatrix: cannot merge different class counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "truth\\pred";
  for (std::size_t j = 0; j < classes_; ++j) os << "," << j;
  os << "\n";
  for (std::size_t i = 0; i < classes_; ++i) {
    os << i;
    for (std::size_t j = 0; j < classes_; ++j) os << "," << (*this)(i, j);
    os << "\n";
  }
  return os.str();
}

MetricReport compute_all(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw Error("compute_all: confusion matrix is empty");
  const std::size_t c = cm.classes();

  std::vector<Real> truth_count(c, 0), pred_count(c, 0);
  Real diagonal = 0;
  for (std::size_t i = 0; i < c; ++i) {
    diagonal += static_cast<Real>(cm(i, i));
    for (std::size_t j = 0; j < c; ++j) {
      truth_count[i] += static_cast<Real>(cm(i, j));
      pred_count[j] += static_cast<Real>(cm(i, j));
    }
  }

  MetricReport report;
  const Real n = static_cast<Real>(total);
  report.pixel_accuracy = diagonal / n;

  Real acc_sum = 0, iou_sum = 0, fw_sum = 0;
  std::size_t acc_classes = 0, iou_classes = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const Real nii = static_cast<Real>(cm(i, i));
    if (truth_count[i] > 0) {
      acc_sum += nii / truth_count[i];
      ++acc_classes;
    }
    const Real uni = truth_count[i] + pred_count[i] - nii;
    if (uni > 0) {
      iou_sum += nii / uni;
      fw_sum += truth_count[i] * nii / uni;
      ++iou_classes;
    }
  }
  report.mean_accuracy = acc_classes ? acc_sum / static_cast<Real>(acc_classes) : 0;
  report.mean_iou = iou_classes ? iou_sum / static_cast<Real>(iou_classes) : 0;
  report.fw_iou = fw_sum / n;

  if (c == 2) {
    const Real tp = static_cast<Real>(cm(1, 1));
    const Real fp = static_cast<Real>(cm(0, 1));
    const Real fn = static_cast<Real>(cm(1, 0));
    report.precision = tp + fp > 0 ? tp / (tp + fp) : 0;
    report.recall = tp + fn > 0 ? tp / (tp + fn) : 0;
    report.f1 = 2 * tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0;
  }
  return report;
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto row = [&](const char* name, Real v) { os << std::left << std::setw(16) << name << v << "\n"; };
  row("pixel_accuracy", pixel_accuracy);
  row("mean_accuracy", mean_accuracy);
  row("mean_iou", mean_iou);
  row("fw_iou", fw_iou);
  if (precision) row("precision", *precision);
  if (recall) row("recall", *recall);
  if (f1) row("f1", *f1);
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["pixel_accuracy"] = pixel_accuracy;
  j["mean_accuracy"] = mean_accuracy;
  j["mean_iou"] = mean_iou;
  j["fw_iou"] = fw_iou;
  if (precision) j["precision"] = *precision;
  if (recall) j["recall"] = *recall;
  if (f1) j["f1"] = *f1;
  return j.dump(2);
}

LabelMap argmax_labels(const FeatureMap& scores) {
  LabelMap out(scores.height(), scores.width());
  const std::size_t hw = scores.plane();
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < scores.channels(); ++r) {
      if (scores.values()[r * hw + p] > scores.values()[best * hw + p]) best = r;
    }
    out.values()[p] = static_cast<std::int32_t>(best);
  }
  return out;
}

}  // namespace dam
