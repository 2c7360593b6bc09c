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

#ifndef SEGFUSE_TOOLS_PNG_LABEL_HPP_
#define SEGFUSE_TOOLS_PNG_LABEL_HPP_

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "segfuse/core.hpp"
#include "segfuse/error.hpp"

namespace segfuse_tools {

// Label maps travel as 8-bit grayscale PNGs. Anything else (palette, RGB,
// 16-bit) would need a lossy conversion, so those files are rejected
// instead of silently reinterpreted.
inline segfuse::LabelMap read_gray8_png(const std::filesystem::path& path) {
  using segfuse::errc;
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) segfuse::fail(errc::io_failure, "cannot open " + path.string());

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    segfuse::fail(errc::bad_magic, path.string() + " is not a PNG file");
  }

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    segfuse::fail(errc::io_failure, "libpng initialization failed");
  }

  // libpng reports errors by longjmp; throw only after cleanup, from our
  // own frame.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    segfuse::fail(errc::io_failure, "libpng failed reading " + path.string());
  }

  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    segfuse::fail(errc::unsupported_dtype,
                  path.string() + ": label PNG must be 8-bit grayscale, got " +
                      std::to_string(depth) + "-bit color type " +
                      std::to_string(color));
  }

  segfuse::LabelMap lbl = segfuse::LabelMap::make(static_cast<int>(height),
                                                  static_cast<int>(width));
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = lbl.data.data() + static_cast<std::size_t>(y) * width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return lbl;
}

inline void write_gray8_png(const segfuse::LabelMap& lbl,
                            const std::filesystem::path& path) {
  using segfuse::errc;
  if (lbl.height < 1 || lbl.width < 1)
    segfuse::fail(errc::bad_argument, "cannot write an empty label map");

  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp)
    segfuse::fail(errc::io_failure,
                  "cannot open " + path.string() + " for writing");

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    segfuse::fail(errc::io_failure, "libpng initialization failed");
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    segfuse::fail(errc::io_failure, "libpng failed writing " + path.string());
  }

  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(lbl.width),
               static_cast<png_uint_32>(lbl.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < lbl.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(
                           lbl.data.data() +
                           static_cast<std::size_t>(y) * lbl.width));
  }
  png_write_end(png, nullptr);

  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace segfuse_tools

#endif  // SEGFUSE_TOOLS_PNG_LABEL_HPP_
