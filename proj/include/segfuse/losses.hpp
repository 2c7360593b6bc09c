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

#ifndef SEGFUSE_LOSSES_HPP_
#define SEGFUSE_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "segfuse/class_weights.hpp"
#include "segfuse/core.hpp"
#include "segfuse/error.hpp"
#include "segfuse/metrics.hpp"

namespace segfuse {

// One training example: pre-softmax scores plus the ground truth and the
// side inputs the individual losses require.
struct LossBatch {
  ChannelVolume logits;  // K x H x W
  LabelMap gt;           // H x W, values < K or 255
  std::optional<ClassWeights> weights;
  std::optional<ConfusionMatrix> confusion;
};

struct LossResult {
  double value = 0.0;    // mean over counted pixels
  ChannelVolume grad;    // d(value) / d(logit), zero at ignored pixels
  std::uint64_t counted_pixels = 0;
};

enum class LossKind { weighted_ce, pixel_distribution, confusion_focal };

namespace detail {

// Probabilities this small are clamped before entering ln() or a division.
inline constexpr double kProbFloor = 1e-12;

inline void validate_batch(const LossBatch& b) {
  const int k = b.logits.channels;
  if (k < 1 || k > 255) {
    fail(errc::class_out_of_range,
         "logit volume must have between 1 and 255 channels, got " +
             std::to_string(k));
  }
  if (b.logits.height != b.gt.height || b.logits.width != b.gt.width) {
    fail(errc::shape_mismatch,
         "logits are " + std::to_string(b.logits.height) + "x" +
             std::to_string(b.logits.width) + " but ground truth is " +
             std::to_string(b.gt.height) + "x" + std::to_string(b.gt.width));
  }
  for (std::uint8_t v : b.gt.data) {
    if (v != kIgnoreLabel && v >= k) {
      fail(errc::class_out_of_range,
           "ground-truth label " + std::to_string(int(v)) +
               " outside [0, " + std::to_string(k) + ")");
    }
  }
}

inline const ClassWeights& require_weights(const LossBatch& b) {
  if (!b.weights) fail(errc::missing_weights, "loss requires class weights");
  if (static_cast<int>(b.weights->weights.size()) != b.logits.channels) {
    fail(errc::class_count_mismatch,
         "got " + std::to_string(b.weights->weights.size()) +
             " class weights for " + std::to_string(b.logits.channels) +
             " channels");
  }
  return *b.weights;
}

inline const ConfusionMatrix& require_confusion(const LossBatch& b) {
  if (!b.confusion) {
    fail(errc::missing_confusion, "loss requires a confusion matrix");
  }
  if (b.confusion->num_classes() != b.logits.channels) {
    fail(errc::class_count_mismatch,
         "confusion matrix is " + std::to_string(b.confusion->num_classes()) +
             "-class but logits have " + std::to_string(b.logits.channels) +
             " channels");
  }
  return *b.confusion;
}

struct PixelTerm {
  double contribution;  // pixel loss before the 1/n mean
  double dldp;          // d(contribution) / d(p_gt), factors held constant
};

// Shared driver: softmax per pixel, policy supplies the per-pixel term,
// gradient follows from the softmax chain rule
//   d p_g / d logit_k = p_g (delta_{kg} - p_k).
// The value is a fixed-order sum in pixel row-major order; that order is
// part of the contract so repeated runs agree bitwise.
template <typename Policy>
LossResult loss_drive(const LossBatch& b, Policy&& per_pixel) {
  validate_batch(b);
  const int k = b.logits.channels;
  const std::size_t pixels = b.gt.data.size();

  std::uint64_t n = 0;
  for (std::uint8_t v : b.gt.data) n += (v != kIgnoreLabel);
  if (n == 0) fail(errc::all_ignored, "batch has no pixels to count");

  LossResult out;
  out.counted_pixels = n;
  out.grad = ChannelVolume::make(k, b.logits.height, b.logits.width);
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> p(k);
  double total = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    const std::uint8_t g = b.gt.data[i];
    if (g == kIgnoreLabel) continue;

    double top = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      top = std::max(top, double(b.logits.data[std::size_t(c) * pixels + i]));
    }
    double z = 0.0;
    for (int c = 0; c < k; ++c) {
      p[c] = std::exp(double(b.logits.data[std::size_t(c) * pixels + i]) - top);
      z += p[c];
    }
    int best = 0;
    for (int c = 0; c < k; ++c) {
      p[c] /= z;
      if (p[c] > p[best]) best = c;
    }

    const PixelTerm term = per_pixel(int(g), best, p);
    total += term.contribution;
    for (int c = 0; c < k; ++c) {
      const double delta = (c == int(g)) ? 1.0 : 0.0;
      out.grad.data[std::size_t(c) * pixels + i] =
          static_cast<float>(inv_n * term.dldp * p[g] * (delta - p[c]));
    }
  }
  out.value = total * inv_n;
  return out;
}

}  // namespace detail

// Class-weighted cross entropy: (1/n) * sum -w_y ln p_y.
inline LossResult weighted_ce(const LossBatch& b) {
  const ClassWeights& w = detail::require_weights(b);
  return detail::loss_drive(b, [&](int g, int, const std::vector<double>& p) {
    const double t = std::max(p[g], detail::kProbFloor);
    return detail::PixelTerm{-w.weights[g] * std::log(t), -w.weights[g] / t};
  });
}

// Cross entropy whose weight is max(w_y, w_y') with y' the predicted class.
// The factor is a constant per pixel: no gradient flows through the argmax.
inline LossResult pixel_distribution_loss(const LossBatch& b) {
  const ClassWeights& w = detail::require_weights(b);
  return detail::loss_drive(
      b, [&](int g, int best, const std::vector<double>& p) {
        const double f = std::max(w.weights[g], w.weights[best]);
        const double t = std::max(p[g], detail::kProbFloor);
        return detail::PixelTerm{-f * std::log(t), -f / t};
      });
}

// Focal loss scaled by how often y is confused with the prediction y':
//   f = C[y][y'] / max(1, min(C[y][y], C[y'][y'])),
//   loss = (1/n) * sum -f (1 - p_y)^2 ln p_y.
// f is constant per pixel; the focal term participates in the gradient.
inline LossResult confusion_focal_loss(const LossBatch& b) {
  const ConfusionMatrix& cm = detail::require_confusion(b);
  return detail::loss_drive(
      b, [&](int g, int best, const std::vector<double>& p) {
        const std::uint64_t denom =
            std::max<std::uint64_t>(1, std::min(cm.at(g, g), cm.at(best, best)));
        const double f =
            static_cast<double>(cm.at(g, best)) / static_cast<double>(denom);
        const double q = p[g];
        const double t = std::max(q, detail::kProbFloor);
        const double one_m = 1.0 - q;
        return detail::PixelTerm{
            -f * one_m * one_m * std::log(t),
            -f * (-2.0 * one_m * std::log(t) + one_m * one_m / t)};
      });
}

inline LossResult compute_loss(LossKind kind, const LossBatch& b) {
  switch (kind) {
    case LossKind::weighted_ce:
      return weighted_ce(b);
    case LossKind::pixel_distribution:
      return pixel_distribution_loss(b);
    case LossKind::confusion_focal:
      return confusion_focal_loss(b);
  }
  fail(errc::bad_argument, "unknown loss kind");
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::uint64_t entries_compared = 0;
  std::uint64_t pixels_skipped = 0;
};

// Central-difference verification of the analytic gradient. Pixels whose
// top-two logits are within 3*eps are skipped for the argmax-dependent
// losses: a perturbation there can flip y' and the loss is not
// differentiable across that boundary.
inline GradCheckReport check_gradients(LossKind kind, const LossBatch& b,
                                       double eps = 1e-3) {
  const LossResult analytic = compute_loss(kind, b);
  const int k = b.logits.channels;
  const std::size_t pixels = b.gt.data.size();
  const bool argmax_sensitive = kind != LossKind::weighted_ce;

  GradCheckReport report;
  LossBatch probe = b;
  for (std::size_t i = 0; i < pixels; ++i) {
    if (b.gt.data[i] == kIgnoreLabel) continue;
    if (argmax_sensitive) {
      double top = -std::numeric_limits<double>::infinity();
      double second = top;
      for (int c = 0; c < k; ++c) {
        const double v = b.logits.data[std::size_t(c) * pixels + i];
        if (v > top) {
          second = top;
          top = v;
        } else {
          second = std::max(second, v);
        }
      }
      if (k > 1 && top - second < 3.0 * eps) {
        ++report.pixels_skipped;
        continue;
      }
    }
    for (int c = 0; c < k; ++c) {
      const std::size_t idx = std::size_t(c) * pixels + i;
      const float saved = b.logits.data[idx];
      const float hi = static_cast<float>(saved + eps);
      const float lo = static_cast<float>(saved - eps);
      probe.logits.data[idx] = hi;
      const double up = compute_loss(kind, probe).value;
      probe.logits.data[idx] = lo;
      const double down = compute_loss(kind, probe).value;
      probe.logits.data[idx] = saved;
      // Divide by the achieved perturbation, not 2*eps: the +-eps steps
      // round in f32 and that quantization would otherwise dominate.
      const double fd = (up - down) / (double(hi) - double(lo));
      const double a = analytic.grad.data[idx];
      const double scale = std::max({std::abs(a), std::abs(fd), 1e-12});
      report.max_rel_err = std::max(report.max_rel_err, std::abs(a - fd) / scale);
      ++report.entries_compared;
    }
  }
  return report;
}

}  // namespace segfuse

#endif  // SEGFUSE_LOSSES_HPP_
