#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "atv/tensor.hpp"

namespace atv {

// K x K pixel-count table: counts(g, p) = pixels with ground truth g
// predicted as p. Ignore pixels are excluded. Integer accumulation keeps
// merging exact and order-independent.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return k_; }
  uint64_t at(int truth, int pred) const { return counts_[static_cast<size_t>(truth) * k_ + pred]; }
  uint64_t total() const;

  void update(const Tensor<int32_t>& pred, const Tensor<int32_t>& label, int32_t ignore_index);
  void merge(const ConfusionMatrix& other);

  // Per-class TP/(TP+FP+FN); classes with an empty union come back as NaN
  // and are excluded from the mean.
  std::vector<double> iou_per_class() const;
  double mean_iou() const;
  double pixel_accuracy() const;

 private:
  int k_;
  std::vector<uint64_t> counts_;
};

// Machine-readable key=value report: class_<k>_iou, miou, pixel_acc.
std::string metrics_report(const ConfusionMatrix& cm);

}  // namespace atv
