// Copyright 2026 The segfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEGFUSE_METRICS_HPP_
#define SEGFUSE_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segfuse/core.hpp"
#include "segfuse/error.hpp"

namespace segfuse {

/// K x K count matrix. Entry (i, j) counts pixels with ground truth class i
/// predicted as class j. Counts are 64-bit: full-dataset evaluation at
/// 198,244 frames x 480x853 pixels overflows 32 bits.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes) : num_classes_(num_classes) {
    if (num_classes < 1)
      fail(errc::bad_argument, "confusion matrix needs at least 1 class");
    counts_.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
  }

  int num_classes() const { return num_classes_; }

  std::uint64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  std::uint64_t& at(int gt, int pred) {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }

  /// Adds every pixel where gt != kIgnoreLabel; ignored pixels are skipped
  /// entirely. The prediction must not contain the ignore value.
  void accumulate(const LabelMap& gt, const LabelMap& pred) {
    if (!gt.same_shape(pred))
      fail(errc::shape_mismatch,
           "gt is " + std::to_string(gt.height) + "x" +
               std::to_string(gt.width) + ", pred is " +
               std::to_string(pred.height) + "x" + std::to_string(pred.width));
    const std::size_t n = gt.pixel_count();
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t g = gt.data[i];
      if (g == kIgnoreLabel) continue;
      const std::uint8_t p = pred.data[i];
      if (g >= num_classes_)
        fail(errc::class_out_of_range,
             "ground-truth class " + std::to_string(g) + " >= num_classes " +
                 std::to_string(num_classes_));
      if (p >= num_classes_)
        fail(errc::class_out_of_range,
             "predicted class " + std::to_string(p) + " >= num_classes " +
                 std::to_string(num_classes_));
      ++at(g, p);
    }
  }

  /// Entrywise sum. Per-frame matrices merge in any order with no change in
  /// the result, so parallel evaluation equals serial evaluation exactly.
  void merge(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_)
      fail(errc::shape_mismatch, "merging confusion matrices of different K");
    for (std::size_t i = 0; i < counts_.size(); ++i)
      counts_[i] += other.counts_[i];
  }

  std::uint64_t row_sum(int i) const {
    std::uint64_t s = 0;
    for (int j = 0; j < num_classes_; ++j) s += at(i, j);
    return s;
  }
  std::uint64_t col_sum(int j) const {
    std::uint64_t s = 0;
    for (int i = 0; i < num_classes_; ++i) s += at(i, j);
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (std::uint64_t c : counts_) s += c;
    return s;
  }

  const std::vector<std::uint64_t>& counts() const { return counts_; }

 private:
  int num_classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

struct IouReport {
  /// IoU per class; nullopt marks a class whose union is zero (absent).
  std::vector<std::optional<double>> per_class;
  double mean_iou = 0.0;
  int present_classes = 0;
};

/// IoU_i = C_ii / (row_i + col_i - C_ii). Classes with union 0 are excluded
/// from the mean.
inline IouReport miou(const ConfusionMatrix& cm) {
  IouReport report;
  report.per_class.resize(cm.num_classes());
  double sum = 0.0;
  for (int i = 0; i < cm.num_classes(); ++i) {
    const std::uint64_t inter = cm.at(i, i);
    const std::uint64_t uni = cm.row_sum(i) + cm.col_sum(i) - inter;
    if (uni == 0) continue;
    const double iou =
        static_cast<double>(inter) / static_cast<double>(uni);
    report.per_class[i] = iou;
    sum += iou;
    ++report.present_classes;
  }
  if (report.present_classes == 0)
    fail(errc::empty_matrix, "no class has any ground-truth or predicted pixel");
  report.mean_iou = sum / report.present_classes;
  return report;
}

/// Fraction of pixels carrying a valid (non-255) annotation. An empty map
/// counts as 0.0 so the coverage filter discards degenerate images.
inline double coverage(const LabelMap& lbl) {
  const std::size_t total = lbl.pixel_count();
  if (total == 0) return 0.0;
  std::size_t annotated = 0;
  for (std::uint8_t v : lbl.data)
    if (v != kIgnoreLabel) ++annotated;
  return static_cast<double>(annotated) / static_cast<double>(total);
}

}  // namespace segfuse

#endif  // SEGFUSE_METRICS_HPP_
