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
//
// The "SEGT" binary tensor format used to exchange pixel data with external
// inference processes:
//
//   offset 0  magic   4 bytes "SEGT"
//   offset 4  version 1 byte, currently 1
//   offset 5  dtype   1 byte, 0 = u8, 1 = f32 little-endian
//   offset 6  rank    1 byte
//   offset 7  dims    rank x u32 little-endian
//   then      payload row-major values
//
// All multi-byte fields are little-endian regardless of host order.

#ifndef SEGFUSE_TENSOR_IO_HPP_
#define SEGFUSE_TENSOR_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "segfuse/core.hpp"
#include "segfuse/error.hpp"

namespace segfuse {

enum class Dtype : std::uint8_t { u8 = 0, f32 = 1 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::u8 ? 1 : 4; }

/// Parsed SEGT tensor: dtype, dims, and the raw little-endian payload bytes.
struct TensorFile {
  Dtype dtype = Dtype::u8;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  // Product of dims; the empty product (rank 0) is 1, a single scalar.
  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }

  static TensorFile from_u8(std::vector<std::uint32_t> dims,
                            std::vector<std::uint8_t> values) {
    TensorFile t;
    t.dtype = Dtype::u8;
    t.dims = std::move(dims);
    t.payload = std::move(values);
    if (t.payload.size() != t.element_count())
      fail(errc::shape_mismatch, "u8 payload does not match dims");
    return t;
  }

  static TensorFile from_f32(std::vector<std::uint32_t> dims,
                             std::span<const float> values) {
    TensorFile t;
    t.dtype = Dtype::f32;
    t.dims = std::move(dims);
    if (values.size() != t.element_count())
      fail(errc::shape_mismatch, "f32 payload does not match dims");
    t.payload.resize(values.size() * 4);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(t.payload.data(), values.data(), t.payload.size());
    } else {
      for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        t.payload[4 * i + 0] = static_cast<std::uint8_t>(bits);
        t.payload[4 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
        t.payload[4 * i + 2] = static_cast<std::uint8_t>(bits >> 16);
        t.payload[4 * i + 3] = static_cast<std::uint8_t>(bits >> 24);
      }
    }
    return t;
  }

  std::vector<float> to_f32() const {
    if (dtype != Dtype::f32)
      fail(errc::unsupported_dtype, "tensor is not f32");
    std::vector<float> out(element_count());
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), payload.data(), payload.size());
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = std::uint32_t(payload[4 * i]) |
                             std::uint32_t(payload[4 * i + 1]) << 8 |
                             std::uint32_t(payload[4 * i + 2]) << 16 |
                             std::uint32_t(payload[4 * i + 3]) << 24;
        out[i] = std::bit_cast<float>(bits);
      }
    }
    return out;
  }

  bool operator==(const TensorFile& other) const {
    return dtype == other.dtype && dims == other.dims &&
           payload == other.payload;
  }
};

namespace detail {

inline constexpr char kMagic[4] = {'S', 'E', 'G', 'T'};
inline constexpr std::uint8_t kFormatVersion = 1;

inline std::uint32_t load_u32_le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline void store_u32_le(std::uint32_t v, std::uint8_t* p) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_tensor(const TensorFile& t) {
  if (t.dims.size() > 255)
    fail(errc::bad_argument, "tensor rank exceeds 255");
  if (t.payload.size() != t.element_count() * dtype_size(t.dtype))
    fail(errc::shape_mismatch, "payload does not match dims");
  std::vector<std::uint8_t> out(7 + 4 * t.dims.size() + t.payload.size());
  std::memcpy(out.data(), detail::kMagic, 4);
  out[4] = detail::kFormatVersion;
  out[5] = static_cast<std::uint8_t>(t.dtype);
  out[6] = static_cast<std::uint8_t>(t.dims.size());
  for (std::size_t i = 0; i < t.dims.size(); ++i)
    detail::store_u32_le(t.dims[i], out.data() + 7 + 4 * i);
  std::memcpy(out.data() + 7 + 4 * t.dims.size(), t.payload.data(),
              t.payload.size());
  return out;
}

/// Parses a SEGT byte stream. `origin` names the source in error messages.
inline TensorFile parse_tensor(const std::uint8_t* data, std::size_t size,
                               const std::string& origin) {
  const auto need = [&](std::size_t up_to, const char* what) {
    if (size < up_to)
      fail(errc::truncated_payload,
           origin + ": " + what + " truncated, file ends at byte " +
               std::to_string(size) + ", need " + std::to_string(up_to));
  };
  need(4, "magic");
  if (std::memcmp(data, detail::kMagic, 4) != 0)
    fail(errc::bad_magic, origin + ": bad magic at byte offset 0");
  need(5, "version byte");
  if (data[4] != detail::kFormatVersion)
    fail(errc::unsupported_version,
         origin + ": unsupported version " + std::to_string(data[4]) +
             " at byte offset 4");
  need(6, "dtype byte");
  if (data[5] > 1)
    fail(errc::unsupported_dtype,
         origin + ": unknown dtype " + std::to_string(data[5]) +
             " at byte offset 5");
  need(7, "rank byte");
  const std::size_t rank = data[6];
  need(7 + 4 * rank, "dims");

  TensorFile t;
  t.dtype = static_cast<Dtype>(data[5]);
  t.dims.resize(rank);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims[i] = detail::load_u32_le(data + 7 + 4 * i);
    if (t.dims[i] != 0 && count > UINT64_MAX / t.dims[i])
      fail(errc::truncated_payload,
           origin + ": dims overflow, no payload can match");
    count *= t.dims[i];
  }
  const std::size_t header = 7 + 4 * rank;
  const std::uint64_t expected = count * dtype_size(t.dtype);
  if (size - header != expected)
    fail(errc::truncated_payload,
         origin + ": payload at byte offset " + std::to_string(header) +
             " holds " + std::to_string(size - header) + " bytes, expected " +
             std::to_string(expected));
  t.payload.assign(data + header, data + size);
  return t;
}

inline TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_failure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(errc::io_failure, "read failed on " + path.string());
  return parse_tensor(bytes.data(), bytes.size(), path.string());
}

inline void write_tensor(const TensorFile& t,
                         const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(errc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(errc::io_failure, "write failed on " + path.string());
}

// Conversions between SEGT tensors and the pixel types. Shapes are validated
// so a mislabeled file fails loudly instead of being reinterpreted.

inline TensorFile to_tensor(const LabelMap& lbl) {
  return TensorFile::from_u8(
      {static_cast<std::uint32_t>(lbl.height),
       static_cast<std::uint32_t>(lbl.width)},
      lbl.data);
}

inline TensorFile to_tensor(const Image& img) {
  return TensorFile::from_u8(
      {static_cast<std::uint32_t>(img.height),
       static_cast<std::uint32_t>(img.width), 3u},
      img.data);
}

inline TensorFile to_tensor(const ChannelVolume& vol) {
  return TensorFile::from_f32(
      {static_cast<std::uint32_t>(vol.channels),
       static_cast<std::uint32_t>(vol.height),
       static_cast<std::uint32_t>(vol.width)},
      vol.data);
}

inline LabelMap label_from_tensor(const TensorFile& t,
                                  const std::string& origin = "tensor") {
  if (t.dtype != Dtype::u8 || t.dims.size() != 2)
    fail(errc::shape_mismatch,
         origin + ": label map must be a rank-2 u8 tensor");
  LabelMap lbl;
  lbl.height = static_cast<int>(t.dims[0]);
  lbl.width = static_cast<int>(t.dims[1]);
  lbl.data = t.payload;
  return lbl;
}

inline Image image_from_tensor(const TensorFile& t,
                               const std::string& origin = "tensor") {
  if (t.dtype != Dtype::u8 || t.dims.size() != 3 || t.dims[2] != 3)
    fail(errc::shape_mismatch,
         origin + ": image must be a rank-3 u8 tensor with 3 channels");
  Image img;
  img.height = static_cast<int>(t.dims[0]);
  img.width = static_cast<int>(t.dims[1]);
  img.data = t.payload;
  return img;
}

inline ChannelVolume volume_from_tensor(const TensorFile& t,
                                        const std::string& origin = "tensor") {
  if (t.dtype != Dtype::f32 || t.dims.size() != 3)
    fail(errc::shape_mismatch,
         origin + ": volume must be a rank-3 f32 tensor (K x H x W)");
  ChannelVolume vol;
  vol.channels = static_cast<int>(t.dims[0]);
  vol.height = static_cast<int>(t.dims[1]);
  vol.width = static_cast<int>(t.dims[2]);
  vol.data = t.to_f32();
  return vol;
}

}  // namespace segfuse

#endif  // SEGFUSE_TENSOR_IO_HPP_
