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

#ifndef SEGFUSE_CLASS_WEIGHTS_HPP_
#define SEGFUSE_CLASS_WEIGHTS_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segfuse/core.hpp"
#include "segfuse/error.hpp"

namespace segfuse {

/// Per-class training-set pixel counts n_i. Ignore pixels are never counted.
struct PixelCounts {
  std::vector<std::uint64_t> counts;

  int num_classes() const { return static_cast<int>(counts.size()); }

  static PixelCounts zeros(int num_classes) {
    if (num_classes < 1)
      fail(errc::bad_argument, "pixel counts need at least 1 class");
    return PixelCounts{std::vector<std::uint64_t>(num_classes, 0)};
  }

  void merge(const PixelCounts& other) {
    if (other.counts.size() != counts.size())
      fail(errc::shape_mismatch, "merging pixel counts of different K");
    for (std::size_t i = 0; i < counts.size(); ++i)
      counts[i] += other.counts[i];
  }
};

/// Per-class weights w_i = sqrt(n_i / mu_n). Weight 0 marks classes with no
/// training pixels.
struct ClassWeights {
  std::vector<double> weights;

  int num_classes() const { return static_cast<int>(weights.size()); }
};

inline void accumulate_pixel_counts(PixelCounts& acc, const LabelMap& lbl) {
  const int k = acc.num_classes();
  for (std::uint8_t v : lbl.data) {
    if (v == kIgnoreLabel) continue;
    if (v >= k)
      fail(errc::class_out_of_range,
           "label value " + std::to_string(v) + " >= num_classes " +
               std::to_string(k));
    ++acc.counts[v];
  }
}

inline PixelCounts count_pixels(std::span<const LabelMap> maps,
                                int num_classes) {
  PixelCounts acc = PixelCounts::zeros(num_classes);
  for (const LabelMap& lbl : maps) accumulate_pixel_counts(acc, lbl);
  return acc;
}

/// Mean pixel count over all K classes, zero-count classes included.
inline double pixel_count_mean(const PixelCounts& n) {
  std::uint64_t total = 0;
  for (std::uint64_t c : n.counts) total += c;
  return static_cast<double>(total) / n.num_classes();
}

/// w_i = sqrt(n_i / mu_n), computed as sqrt(n_i * K / total) so that scaling
/// every count by the same factor cancels in the real-valued quotient.
inline ClassWeights compute_weights(const PixelCounts& n) {
  std::uint64_t total = 0;
  for (std::uint64_t c : n.counts) total += c;
  if (total == 0)
    fail(errc::all_zero_counts, "every class has zero pixels");
  ClassWeights w;
  w.weights.resize(n.counts.size());
  const double k = static_cast<double>(n.num_classes());
  for (std::size_t i = 0; i < n.counts.size(); ++i)
    w.weights[i] = std::sqrt(static_cast<double>(n.counts[i]) * k /
                             static_cast<double>(total));
  return w;
}

}  // namespace segfuse

#endif  // SEGFUSE_CLASS_WEIGHTS_HPP_
