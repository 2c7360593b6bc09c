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

#ifndef SEGFUSE_CORE_HPP_
#define SEGFUSE_CORE_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "segfuse/error.hpp"

namespace segfuse {

/// Pixel value marking unannotated regions. Excluded from losses and metrics.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// 8-bit RGB image, row-major H x W x 3 with interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  static Image make(int h, int w, std::uint8_t fill = 0) {
    if (h < 0 || w < 0) fail(errc::bad_argument, "negative image dimensions");
    Image img;
    img.height = h;
    img.width = w;
    img.data.assign(static_cast<std::size_t>(h) * w * 3, fill);
    return img;
  }

  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }
};

/// Per-pixel integer class map, row-major. Values are class ids < num_classes
/// or kIgnoreLabel.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  static LabelMap make(int h, int w, std::uint8_t fill = 0) {
    if (h < 0 || w < 0) fail(errc::bad_argument, "negative label dimensions");
    LabelMap lbl;
    lbl.height = h;
    lbl.width = w;
    lbl.data.assign(static_cast<std::size_t>(h) * w, fill);
    return lbl;
  }

  std::uint8_t at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }

  bool same_shape(const LabelMap& other) const {
    return height == other.height && width == other.width;
  }
};

/// K x H x W float volume stored as K contiguous H*W planes.
/// Used both for soft predictions (probabilities) and for pre-softmax logits.
struct ChannelVolume {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  static ChannelVolume make(int k, int h, int w, float fill = 0.f) {
    if (k < 0 || h < 0 || w < 0)
      fail(errc::bad_argument, "negative volume dimensions");
    ChannelVolume v;
    v.channels = k;
    v.height = h;
    v.width = w;
    v.data.assign(static_cast<std::size_t>(k) * h * w, fill);
    return v;
  }

  std::size_t plane_size() const {
    return static_cast<std::size_t>(height) * width;
  }
  float at(int k, int y, int x) const {
    return data[static_cast<std::size_t>(k) * plane_size() +
                static_cast<std::size_t>(y) * width + x];
  }
  float& at(int k, int y, int x) {
    return data[static_cast<std::size_t>(k) * plane_size() +
                static_cast<std::size_t>(y) * width + x];
  }

  bool same_shape(const ChannelVolume& other) const {
    return channels == other.channels && height == other.height &&
           width == other.width;
  }
};

/// Per-pixel probability volume over K classes; channel sums are expected to
/// be 1 within normalization tolerance.
using SoftPrediction = ChannelVolume;

/// Checks the per-pixel channel sums of a probability volume.
inline bool is_normalized(const SoftPrediction& p, double tol = 1e-4) {
  const std::size_t plane = p.plane_size();
  for (std::size_t px = 0; px < plane; ++px) {
    double sum = 0.0;
    for (int k = 0; k < p.channels; ++k) {
      const float v = p.data[static_cast<std::size_t>(k) * plane + px];
      if (v < 0.f) return false;
      sum += v;
    }
    if (sum < 1.0 - tol || sum > 1.0 + tol) return false;
  }
  return true;
}

/// Hardens a soft prediction to a label map. Per pixel, the smallest channel
/// index attaining the maximum wins, so ties resolve deterministically.
inline LabelMap argmax_labels(const ChannelVolume& p) {
  if (p.channels < 1) fail(errc::bad_argument, "argmax needs at least 1 class");
  if (p.channels > 255)
    fail(errc::class_out_of_range,
         "cannot harden " + std::to_string(p.channels) +
             " classes into 8-bit labels");
  LabelMap out = LabelMap::make(p.height, p.width);
  const std::size_t plane = p.plane_size();
  for (std::size_t px = 0; px < plane; ++px) {
    int best = 0;
    float best_val = p.data[px];
    for (int k = 1; k < p.channels; ++k) {
      const float v = p.data[static_cast<std::size_t>(k) * plane + px];
      if (v > best_val) {
        best_val = v;
        best = k;
      }
    }
    out.data[px] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace segfuse

#endif  // SEGFUSE_CORE_HPP_
