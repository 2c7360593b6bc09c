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

#ifndef SEGFUSE_AUGMENT_HPP_
#define SEGFUSE_AUGMENT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <tuple>
#include <utility>

#include "segfuse/core.hpp"
#include "segfuse/error.hpp"

namespace segfuse {

// Multi-scale resize parameters: dims become (h*alpha*(1+beta1),
// w*alpha*(1+beta2)). alpha lands in (0.5, 2.0) once the reciprocal coin
// has been applied; the betas are jitter in (-0.2, 0.2).
struct ScaleSample {
  double alpha = 1.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
};

struct AugmentConfig {
  int crop_h = 480;
  int crop_w = 853;
  double flip_prob = 0.5;
  double distort_prob = 0.5;     // each photometric sub-op, independently
  double brightness_delta = 32.0;
  double contrast_lo = 0.5;
  double contrast_hi = 1.5;
  double saturation_lo = 0.5;
  double saturation_hi = 1.5;
  double hue_delta_deg = 18.0;
  std::uint64_t seed = 0;
};

// Counter-based generator: draw i is a hash of (seed, image_index, i), so
// the sequence an image sees never depends on how work was scheduled
// across threads or on how many draws other images consumed.
class AugRng {
 public:
  AugRng(std::uint64_t seed, std::uint64_t image_index)
      : base_(mix(mix(seed ^ kGolden) ^ image_index)) {}

  // Strictly inside (0, 1): sampled parameters never land on a range
  // endpoint, keeping the documented open intervals honest.
  double uniform() {
    const std::uint64_t v = mix(base_ + (++count_) * kGolden);
    return (static_cast<double>(v >> 12) + 0.5) * 0x1.0p-52;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  bool coin(double prob) { return uniform() < prob; }

  std::uint64_t draws() const { return count_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t base_ = 0;
  std::uint64_t count_ = 0;
};

// Per-image audit record of every random decision the pipeline made.
struct AugmentTrace {
  ScaleSample scale;
  int resize_h = 0;
  int resize_w = 0;
  int crop_row = 0;
  int crop_col = 0;
  bool flipped = false;
  bool brightness_on = false;
  double brightness = 0.0;
  bool contrast_on = false;
  double contrast = 1.0;
  bool saturation_on = false;
  double saturation = 1.0;
  bool hue_on = false;
  double hue_deg = 0.0;
};

namespace detail {

inline std::uint8_t clamp_round(double v) {
  const long r = std::lround(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0L, 255L));
}

// Half-pixel-center source coordinate for destination index d.
inline double src_coord(int d, int src_len, int dst_len) {
  return (d + 0.5) * (static_cast<double>(src_len) / dst_len) - 0.5;
}

// Hue in [0, 360) degrees, saturation and value in [0, 1].
struct Hsv {
  float h, s, v;
};

inline Hsv rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const float r = r8 / 255.0f, g = g8 / 255.0f, b = b8 / 255.0f;
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  Hsv out{0.0f, 0.0f, mx};
  if (mx > 0.0f) out.s = d / mx;
  if (d > 0.0f) {
    if (mx == r) {
      out.h = 60.0f * ((g - b) / d);
    } else if (mx == g) {
      out.h = 60.0f * ((b - r) / d + 2.0f);
    } else {
      out.h = 60.0f * ((r - g) / d + 4.0f);
    }
    if (out.h < 0.0f) out.h += 360.0f;
  }
  return out;
}

inline void hsv_to_rgb(const Hsv& in, std::uint8_t& r8, std::uint8_t& g8,
                       std::uint8_t& b8) {
  const float c = in.v * in.s;
  const float hp = in.h / 60.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0.0f, g = 0.0f, b = 0.0f;
  switch (std::min(5, static_cast<int>(hp))) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    case 5: r = c; b = x; break;
  }
  const float m = in.v - c;
  r8 = clamp_round((r + m) * 255.0f);
  g8 = clamp_round((g + m) * 255.0f);
  b8 = clamp_round((b + m) * 255.0f);
}

}  // namespace detail

// Draw order is part of the determinism contract: alpha, reciprocal coin,
// beta1, beta2.
template <typename Rng>
ScaleSample sample_scale(Rng& rng) {
  ScaleSample s;
  s.alpha = rng.uniform(1.0, 2.0);
  if (rng.coin(0.5)) s.alpha = 1.0 / s.alpha;
  s.beta1 = rng.uniform(-0.2, 0.2);
  s.beta2 = rng.uniform(-0.2, 0.2);
  return s;
}

// Round-half-up target dims, never below one pixel.
inline int resize_target(int len, double alpha, double beta) {
  const double scaled = len * alpha * (1.0 + beta);
  return std::max(1, static_cast<int>(std::floor(scaled + 0.5)));
}

// Image is resampled bilinearly over half-pixel centers; the label uses
// nearest-neighbor on the same grid so no new class ids can appear. An
// identity sample reproduces both inputs byte for byte.
inline std::pair<Image, LabelMap> resize_pair(const Image& img,
                                              const LabelMap& lbl,
                                              const ScaleSample& s) {
  if (img.height != lbl.height || img.width != lbl.width) {
    fail(errc::shape_mismatch, "image and label dimensions differ");
  }
  if (img.height <= 0 || img.width <= 0) {
    fail(errc::bad_argument, "cannot resize an empty image");
  }
  const int dst_h = resize_target(img.height, s.alpha, s.beta1);
  const int dst_w = resize_target(img.width, s.alpha, s.beta2);

  Image out_img = Image::make(dst_h, dst_w);
  LabelMap out_lbl = LabelMap::make(dst_h, dst_w);
  for (int y = 0; y < dst_h; ++y) {
    const double sy = detail::src_coord(y, img.height, dst_h);
    // Keep the true fraction and clamp only the sampled indices, so
    // coordinates past an edge replicate the border row/column.
    const double fy = sy - std::floor(sy);
    const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, img.height - 1);
    const int y1 = std::clamp(static_cast<int>(std::floor(sy)) + 1, 0, img.height - 1);
    const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, img.height - 1);
    for (int x = 0; x < dst_w; ++x) {
      const double sx = detail::src_coord(x, img.width, dst_w);
      const double fx = sx - std::floor(sx);
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, img.width - 1);
      const int x1 = std::clamp(static_cast<int>(std::floor(sx)) + 1, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
        const double bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
        out_img.at(y, x, c) = detail::clamp_round((1.0 - fy) * top + fy * bot);
      }
      const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, img.width - 1);
      out_lbl.at(y, x) = lbl.at(ny, nx);
    }
  }
  return {std::move(out_img), std::move(out_lbl)};
}

// Pads bottom/right (image 128, label 255) when a side is short of the
// crop size, then cuts the window at the drawn offsets. The row and
// column draws are always consumed, even when only offset 0 is valid.
template <typename Rng>
std::pair<Image, LabelMap> random_crop(const Image& img, const LabelMap& lbl,
                                       const AugmentConfig& cfg, Rng& rng,
                                       AugmentTrace* trace = nullptr) {
  if (img.height != lbl.height || img.width != lbl.width) {
    fail(errc::shape_mismatch, "image and label dimensions differ");
  }
  if (cfg.crop_h <= 0 || cfg.crop_w <= 0) {
    fail(errc::bad_argument, "crop dimensions must be positive");
  }
  const int slack_h = std::max(0, img.height - cfg.crop_h);
  const int slack_w = std::max(0, img.width - cfg.crop_w);
  const int row = static_cast<int>(rng.uniform() * (slack_h + 1));
  const int col = static_cast<int>(rng.uniform() * (slack_w + 1));
  if (trace) {
    trace->crop_row = row;
    trace->crop_col = col;
  }

  Image out_img = Image::make(cfg.crop_h, cfg.crop_w, 128);
  LabelMap out_lbl = LabelMap::make(cfg.crop_h, cfg.crop_w, kIgnoreLabel);
  const int copy_h = std::min(cfg.crop_h, img.height - row);
  const int copy_w = std::min(cfg.crop_w, img.width - col);
  for (int y = 0; y < copy_h; ++y) {
    for (int x = 0; x < copy_w; ++x) {
      for (int c = 0; c < 3; ++c)
        out_img.at(y, x, c) = img.at(row + y, col + x, c);
      out_lbl.at(y, x) = lbl.at(row + y, col + x);
    }
  }
  return {std::move(out_img), std::move(out_lbl)};
}

inline std::pair<Image, LabelMap> hflip_pair(const Image& img,
                                             const LabelMap& lbl) {
  if (img.height != lbl.height || img.width != lbl.width) {
    fail(errc::shape_mismatch, "image and label dimensions differ");
  }
  Image out_img = Image::make(img.height, img.width);
  LabelMap out_lbl = LabelMap::make(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int mx = img.width - 1 - x;
      for (int c = 0; c < 3; ++c) out_img.at(y, x, c) = img.at(y, mx, c);
      out_lbl.at(y, x) = lbl.at(y, mx);
    }
  }
  return {std::move(out_img), std::move(out_lbl)};
}

// Photometric ops in fixed order: brightness, contrast, saturation, hue.
// Each op draws its coin, then its value only when the coin lands; every
// op clamps back to [0, 255] bytes before the next one runs.
template <typename Rng>
Image metric_distortion(const Image& img, const AugmentConfig& cfg, Rng& rng,
                        AugmentTrace* trace = nullptr) {
  Image out = img;

  if (rng.coin(cfg.distort_prob)) {
    const double delta =
        rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
    if (trace) {
      trace->brightness_on = true;
      trace->brightness = delta;
    }
    for (auto& v : out.data) v = detail::clamp_round(v + delta);
  }

  if (rng.coin(cfg.distort_prob)) {
    const double c = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
    if (trace) {
      trace->contrast_on = true;
      trace->contrast = c;
    }
    for (auto& v : out.data) v = detail::clamp_round(v * c);
  }

  if (rng.coin(cfg.distort_prob)) {
    const double s = rng.uniform(cfg.saturation_lo, cfg.saturation_hi);
    if (trace) {
      trace->saturation_on = true;
      trace->saturation = s;
    }
    for (std::size_t i = 0; i < out.data.size(); i += 3) {
      detail::Hsv hsv = detail::rgb_to_hsv(out.data[i], out.data[i + 1],
                                           out.data[i + 2]);
      hsv.s = std::min(1.0f, hsv.s * static_cast<float>(s));
      detail::hsv_to_rgb(hsv, out.data[i], out.data[i + 1], out.data[i + 2]);
    }
  }

  if (rng.coin(cfg.distort_prob)) {
    const double h = rng.uniform(-cfg.hue_delta_deg, cfg.hue_delta_deg);
    if (trace) {
      trace->hue_on = true;
      trace->hue_deg = h;
    }
    for (std::size_t i = 0; i < out.data.size(); i += 3) {
      detail::Hsv hsv = detail::rgb_to_hsv(out.data[i], out.data[i + 1],
                                           out.data[i + 2]);
      hsv.h = std::fmod(hsv.h + static_cast<float>(h), 360.0f);
      if (hsv.h < 0.0f) hsv.h += 360.0f;
      detail::hsv_to_rgb(hsv, out.data[i], out.data[i + 1], out.data[i + 2]);
    }
  }
  return out;
}

// Full pipeline: multi-scale resize, random crop, horizontal flip,
// photometric distortion, consuming draws in exactly that order.
template <typename Rng>
std::pair<Image, LabelMap> augment_with(const Image& img, const LabelMap& lbl,
                                        const AugmentConfig& cfg, Rng& rng,
                                        AugmentTrace* trace = nullptr) {
  const ScaleSample s = sample_scale(rng);
  if (trace) trace->scale = s;
  auto [rimg, rlbl] = resize_pair(img, lbl, s);
  if (trace) {
    trace->resize_h = rimg.height;
    trace->resize_w = rimg.width;
  }
  auto [cimg, clbl] = random_crop(rimg, rlbl, cfg, rng, trace);
  if (rng.coin(cfg.flip_prob)) {
    if (trace) trace->flipped = true;
    std::tie(cimg, clbl) = hflip_pair(cimg, clbl);
  }
  cimg = metric_distortion(cimg, cfg, rng, trace);
  return {std::move(cimg), std::move(clbl)};
}

inline std::pair<Image, LabelMap> augment(const Image& img, const LabelMap& lbl,
                                          const AugmentConfig& cfg,
                                          std::uint64_t image_index,
                                          AugmentTrace* trace = nullptr) {
  AugRng rng(cfg.seed, image_index);
  return augment_with(img, lbl, cfg, rng, trace);
}

}  // namespace segfuse

#endif  // SEGFUSE_AUGMENT_HPP_
