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

#ifndef SEGFUSE_FUSION_HPP_
#define SEGFUSE_FUSION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/core.hpp"
#include "segfuse/error.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/parallel.hpp"

namespace segfuse {

// Test-time-augmentation menu: every scale, optionally also flipped.
struct TtaSpec {
  std::vector<double> scales{0.5, 1.0, 1.5};
  bool flip = true;
};

struct TtaVariant {
  double scale = 1.0;
  bool flipped = false;
};

// Scale-major order, unflipped before flipped, matching how inputs are
// paired with variants everywhere downstream.
inline std::vector<TtaVariant> enumerate_variants(const TtaSpec& spec) {
  if (spec.scales.empty()) {
    fail(errc::bad_argument, "TTA spec needs at least one scale");
  }
  std::vector<TtaVariant> out;
  for (double s : spec.scales) {
    if (!(s > 0.0)) fail(errc::bad_argument, "TTA scales must be positive");
    out.push_back({s, false});
    if (spec.flip) out.push_back({s, true});
  }
  return out;
}

// One model output together with the transform its input underwent.
struct TtaPrediction {
  SoftPrediction probs;
  double scale = 1.0;
  bool flipped = false;
};

struct AggregationSpec {
  double gamma = 0.5;
};

// Per-pixel maximum probability, for confidence diagnostics.
struct FloatMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;
};

namespace detail {

inline SoftPrediction hflip_volume(const SoftPrediction& p) {
  SoftPrediction out = ChannelVolume::make(p.channels, p.height, p.width);
  const std::size_t plane = p.plane_size();
  for (int c = 0; c < p.channels; ++c) {
    for (int y = 0; y < p.height; ++y) {
      for (int x = 0; x < p.width; ++x) {
        out.data[c * plane + std::size_t(y) * p.width + x] =
            p.data[c * plane + std::size_t(y) * p.width + (p.width - 1 - x)];
      }
    }
  }
  return out;
}

// Bilinear over half-pixel centers with border replication, float data,
// no rounding or clamping: probabilities stay non-negative as convex
// combinations of non-negative inputs.
inline SoftPrediction resize_volume(const SoftPrediction& p, int dst_h,
                                    int dst_w) {
  if (p.height == dst_h && p.width == dst_w) return p;
  if (dst_h <= 0 || dst_w <= 0 || p.height <= 0 || p.width <= 0) {
    fail(errc::bad_argument, "cannot resize an empty probability volume");
  }
  SoftPrediction out = ChannelVolume::make(p.channels, dst_h, dst_w);
  const std::size_t src_plane = p.plane_size();
  const std::size_t dst_plane = out.plane_size();
  for (int y = 0; y < dst_h; ++y) {
    const double sy = (y + 0.5) * (static_cast<double>(p.height) / dst_h) - 0.5;
    const double fy = sy - std::floor(sy);
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, p.height - 1);
    const int y1 = std::clamp(static_cast<int>(std::floor(sy)) + 1, 0, p.height - 1);
    for (int x = 0; x < dst_w; ++x) {
      const double sx = (x + 0.5) * (static_cast<double>(p.width) / dst_w) - 0.5;
      const double fx = sx - std::floor(sx);
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, p.width - 1);
      const int x1 = std::clamp(static_cast<int>(std::floor(sx)) + 1, 0, p.width - 1);
      for (int c = 0; c < p.channels; ++c) {
        const float* plane = p.data.data() + c * src_plane;
        const double top = (1.0 - fx) * plane[std::size_t(y0) * p.width + x0] +
                           fx * plane[std::size_t(y0) * p.width + x1];
        const double bot = (1.0 - fx) * plane[std::size_t(y1) * p.width + x0] +
                           fx * plane[std::size_t(y1) * p.width + x1];
        out.data[c * dst_plane + std::size_t(y) * dst_w + x] =
            static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

// Sum in ascending value order: the result is a pure function of the
// multiset of inputs, which is what makes fusion order-independent.
inline double sorted_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

}  // namespace detail

// Un-flips and rescales every prediction to the base geometry, averages
// them entrywise, then renormalizes each pixel to sum one (a pixel whose
// fused mass is zero becomes uniform). The per-entry mean is computed in
// sorted order, so any permutation of `preds` fuses bitwise identically.
inline SoftPrediction fuse_tta(const std::vector<TtaPrediction>& preds,
                               int base_h, int base_w) {
  if (preds.empty()) fail(errc::empty_list, "no predictions to fuse");
  const int k = preds[0].probs.channels;
  for (const TtaPrediction& p : preds) {
    if (p.probs.channels != k) {
      fail(errc::class_count_mismatch,
           "predictions disagree on class count: " + std::to_string(k) +
               " vs " + std::to_string(p.probs.channels));
    }
  }

  std::vector<SoftPrediction> aligned;
  aligned.reserve(preds.size());
  for (const TtaPrediction& p : preds) {
    SoftPrediction v = p.flipped ? detail::hflip_volume(p.probs) : p.probs;
    aligned.push_back(detail::resize_volume(v, base_h, base_w));
  }

  SoftPrediction out = ChannelVolume::make(k, base_h, base_w);
  const std::size_t plane = out.plane_size();
  const double inv_n = 1.0 / static_cast<double>(aligned.size());
  std::vector<double> gather(aligned.size());
  std::vector<double> mean(k);
  for (std::size_t px = 0; px < plane; ++px) {
    double pixel_sum = 0.0;
    for (int c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < aligned.size(); ++i) {
        gather[i] = aligned[i].data[c * plane + px];
      }
      mean[c] = detail::sorted_sum(gather) * inv_n;
      pixel_sum += mean[c];
    }
    for (int c = 0; c < k; ++c) {
      out.data[c * plane + px] =
          pixel_sum > 0.0 ? static_cast<float>(mean[c] / pixel_sum)
                          : static_cast<float>(1.0 / k);
    }
  }
  return out;
}

// P = gamma * P_s + (1 - gamma) * P_v, entrywise in f64 with one rounding
// to f32 per entry. gamma = 0 and gamma = 1 reproduce an input bit-exactly.
inline SoftPrediction aggregate(const SoftPrediction& ps,
                                const SoftPrediction& pv,
                                const AggregationSpec& spec) {
  if (!ps.same_shape(pv)) {
    fail(errc::shape_mismatch, "aggregation inputs differ in shape");
  }
  if (!(spec.gamma >= 0.0 && spec.gamma <= 1.0)) {
    fail(errc::bad_argument, "gamma must lie in [0, 1]");
  }
  const double g = spec.gamma;
  SoftPrediction out = ChannelVolume::make(ps.channels, ps.height, ps.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(g * static_cast<double>(ps.data[i]) +
                                     (1.0 - g) * static_cast<double>(pv.data[i]));
  }
  return out;
}

// The gamma grid: multiples of `step` below one, then exactly 1.0.
inline std::vector<double> gamma_grid(double step) {
  if (!(step > 0.0 && step <= 0.5)) {
    fail(errc::bad_argument, "grid step must lie in (0, 0.5]");
  }
  std::vector<double> grid;
  const int count = static_cast<int>(std::floor(1.0 / step + 1e-9));
  for (int i = 0; i <= count; ++i) {
    const double g = i * step;
    if (g < 1.0 - 1e-12) grid.push_back(g);
  }
  grid.push_back(1.0);
  return grid;
}

struct GammaScore {
  double gamma = 0.0;
  double miou = 0.0;
};

struct GammaSearchResult {
  double gamma = 0.0;
  double miou = 0.0;
  std::vector<GammaScore> curve;
};

// Sweeps the gamma grid, scoring mIoU of argmax(aggregate(ps, pv, g))
// against the ground truth. Streaming: one confusion matrix per grid
// point, frames processed independently and merged as integer counts, so
// the result does not depend on the thread count. Ties break toward the
// smaller gamma.
inline GammaSearchResult gamma_search(const std::vector<SoftPrediction>& ps_set,
                                      const std::vector<SoftPrediction>& pv_set,
                                      const std::vector<LabelMap>& gts,
                                      double grid_step, int threads = 1) {
  if (ps_set.empty()) fail(errc::empty_dataset, "gamma search needs frames");
  if (ps_set.size() != pv_set.size() || ps_set.size() != gts.size()) {
    fail(errc::shape_mismatch,
         "frame lists differ in length: " + std::to_string(ps_set.size()) +
             " / " + std::to_string(pv_set.size()) + " / " +
             std::to_string(gts.size()));
  }
  const int k = ps_set[0].channels;
  if (k < 1 || k > 255) {
    fail(errc::class_out_of_range, "class count must lie in [1, 255]");
  }
  const std::vector<double> grid = gamma_grid(grid_step);

  // One k x k matrix per grid point per worker slot.
  const std::size_t frames = ps_set.size();
  const std::size_t slots =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), frames);
  std::vector<std::vector<ConfusionMatrix>> acc(
      slots, std::vector<ConfusionMatrix>(grid.size(), ConfusionMatrix(k)));

  parallel_for(frames, std::max(1, threads), [&](std::size_t slot,
                                                 std::size_t begin,
                                                 std::size_t end) {
    for (std::size_t f = begin; f < end; ++f) {
      const SoftPrediction& ps = ps_set[f];
      const SoftPrediction& pv = pv_set[f];
      const LabelMap& gt = gts[f];
      if (ps.channels != k || pv.channels != k || !ps.same_shape(pv) ||
          ps.height != gt.height || ps.width != gt.width) {
        fail(errc::shape_mismatch,
             "frame " + std::to_string(f) + " has mismatched shapes");
      }
      const std::size_t plane = ps.plane_size();
      for (std::size_t px = 0; px < plane; ++px) {
        const std::uint8_t truth = gt.data[px];
        if (truth == kIgnoreLabel) continue;
        if (truth >= k) {
          fail(errc::class_out_of_range,
               "ground-truth label " + std::to_string(int(truth)) +
                   " outside [0, " + std::to_string(k) + ")");
        }
        for (std::size_t gi = 0; gi < grid.size(); ++gi) {
          const double g = grid[gi];
          // Same arithmetic as aggregate(): blend in f64, round to f32,
          // argmax with lowest-index tie-break.
          const auto blend = [&](int c) {
            return static_cast<float>(
                g * static_cast<double>(ps.data[c * plane + px]) +
                (1.0 - g) * static_cast<double>(pv.data[c * plane + px]));
          };
          int best = 0;
          float best_val = blend(0);
          for (int c = 1; c < k; ++c) {
            const float val = blend(c);
            if (val > best_val) {
              best_val = val;
              best = c;
            }
          }
          acc[slot][gi].at(truth, best) += 1;
        }
      }
    }
  });

  for (std::size_t slot = 1; slot < slots; ++slot) {
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
      acc[0][gi].merge(acc[slot][gi]);
    }
  }

  GammaSearchResult result;
  result.curve.reserve(grid.size());
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    result.curve.push_back({grid[gi], miou(acc[0][gi]).mean_iou});
  }
  result.gamma = result.curve[0].gamma;
  result.miou = result.curve[0].miou;
  for (const GammaScore& score : result.curve) {
    if (score.miou > result.miou) {
      result.gamma = score.gamma;
      result.miou = score.miou;
    }
  }
  return result;
}

// Per-pixel maximum class probability.
inline FloatMap score_threshold_report(const SoftPrediction& p) {
  FloatMap out;
  out.height = p.height;
  out.width = p.width;
  out.data.resize(p.plane_size());
  const std::size_t plane = p.plane_size();
  for (std::size_t px = 0; px < plane; ++px) {
    float best = p.channels > 0 ? p.data[px] : 0.0f;
    for (int c = 1; c < p.channels; ++c) {
      best = std::max(best, p.data[c * plane + px]);
    }
    out.data[px] = best;
  }
  return out;
}

}  // namespace segfuse

#endif  // SEGFUSE_FUSION_HPP_
