#include "atv/metrics.hpp"

#include <cstdio>
#include <sstream>

namespace atv {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  detail::require(num_classes >= 1, "ConfusionMatrix: need at least one class");
  counts_.assign(static_cast<size_t>(k_) * k_, 0);
}

uint64_t ConfusionMatrix::total() const {
  uint64_t t = 0;
  for (uint64_t c : counts_) t += c;
  return t;
}

void ConfusionMatrix::update(const Tensor<int32_t>& pred, const Tensor<int32_t>& label,
                             int32_t ignore_index) {
  detail::require(pred.shape() == label.shape(),
                  "ConfusionMatrix::update: prediction and label shapes differ");
  const int64_t n = pred.size();
  for (int64_t i = 0; i < n; ++i) {
    const int32_t g = label[i];
    if (g == ignore_index) continue;
    detail::require(g >= 0 && g < k_, "ConfusionMatrix::update: label out of range");
    const int32_t p = pred[i];
    detail::require(p >= 0 && p < k_, "ConfusionMatrix::update: prediction out of range");
    counts_[static_cast<size_t>(g) * k_ + p] += 1;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  detail::require(other.k_ == k_, "ConfusionMatrix::merge: class count mismatch");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::vector<double> ConfusionMatrix::iou_per_class() const {
  std::vector<double> iou(static_cast<size_t>(k_), std::nan(""));
  for (int c = 0; c < k_; ++c) {
    uint64_t tp = at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k_; ++o) {
      if (o == c) continue;
      fp += at(o, c);
      fn += at(c, o);
    }
    const uint64_t uni = tp + fp + fn;
    if (uni > 0) iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return iou;
}

double ConfusionMatrix::mean_iou() const {
  const std::vector<double> iou = iou_per_class();
  double sum = 0.0;
  int defined = 0;
  for (double v : iou) {
    if (!std::isnan(v)) {
      sum += v;
      ++defined;
    }
  }
  if (defined == 0) throw std::runtime_error("mean_iou: no class has any evaluated pixel");
  return sum / defined;
}

double ConfusionMatrix::pixel_accuracy() const {
  const uint64_t t = total();
  if (t == 0) throw std::runtime_error("pixel_accuracy: empty confusion matrix");
  uint64_t diag = 0;
  for (int c = 0; c < k_; ++c) diag += at(c, c);
  return static_cast<double>(diag) / static_cast<double>(t);
}

std::string metrics_report(const ConfusionMatrix& cm) {
  std::ostringstream os;
  char buf[64];
  const std::vector<double> iou = cm.iou_per_class();
  for (int c = 0; c < cm.num_classes(); ++c) {
    if (std::isnan(iou[static_cast<size_t>(c)])) {
      os << "class_" << c << "_iou=undefined\n";
    } else {
      std::snprintf(buf, sizeof(buf), "%.6f", iou[static_cast<size_t>(c)]);
      os << "class_" << c << "_iou=" << buf << "\n";
    }
  }
  std::snprintf(buf, sizeof(buf), "%.6f", cm.mean_iou());
  os << "miou=" << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.6f", cm.pixel_accuracy());
  os << "pixel_acc=" << buf << "\n";
  return os.str();
}

}  // namespace atv
