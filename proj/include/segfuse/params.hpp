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
// Checkpoint container (.params): everything little-endian,
//   u32  entry count
//   per entry: u16 name length, name bytes, embedded .segt tensor
// The embedded tensor length is recovered from its own header, so entries
// are self-delimiting.

#ifndef SEGFUSE_PARAMS_HPP_
#define SEGFUSE_PARAMS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "segfuse/error.hpp"
#include "segfuse/tensor_io.hpp"

namespace segfuse {

struct Param {
  std::string name;
  TensorFile tensor;
};

struct ParameterSet {
  std::vector<Param> entries;
};

namespace detail {

// Size of the tensor starting at `data` inside a larger buffer, from its
// header alone.
inline std::size_t embedded_tensor_size(const std::uint8_t* data,
                                        std::size_t avail,
                                        const std::string& origin) {
  if (avail < 7) {
    fail(errc::truncated_payload,
         origin + ": embedded tensor header needs 7 bytes, " +
             std::to_string(avail) + " remain");
  }
  const std::uint8_t rank = data[6];
  const std::size_t header = 7 + 4 * static_cast<std::size_t>(rank);
  if (avail < header) {
    fail(errc::truncated_payload,
         origin + ": embedded tensor header needs " + std::to_string(header) +
             " bytes, " + std::to_string(avail) + " remain");
  }
  if (data[5] > 1) {
    fail(errc::unsupported_dtype,
         origin + ": embedded tensor has unknown dtype code " +
             std::to_string(int(data[5])));
  }
  std::size_t count = 1;
  for (int d = 0; d < rank; ++d) {
    count *= load_u32_le(data + 7 + 4 * d);
  }
  return header + count * (data[5] == 0 ? 1 : 4);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_parameter_set(
    const ParameterSet& ps) {
  if (ps.entries.size() > 0xFFFFFFFFull) {
    fail(errc::bad_argument, "too many tensors for the container");
  }
  std::vector<std::uint8_t> out(4);
  detail::store_u32_le(static_cast<std::uint32_t>(ps.entries.size()),
                       out.data());
  for (const Param& p : ps.entries) {
    if (p.name.size() > 0xFFFF) {
      fail(errc::bad_argument, "tensor name longer than 65535 bytes");
    }
    out.push_back(static_cast<std::uint8_t>(p.name.size() & 0xFF));
    out.push_back(static_cast<std::uint8_t>(p.name.size() >> 8));
    out.insert(out.end(), p.name.begin(), p.name.end());
    const std::vector<std::uint8_t> tensor = serialize_tensor(p.tensor);
    out.insert(out.end(), tensor.begin(), tensor.end());
  }
  return out;
}

inline ParameterSet parse_parameter_set(const std::uint8_t* data,
                                        std::size_t size,
                                        const std::string& origin) {
  if (size < 4) {
    fail(errc::truncated_payload,
         origin + ": container shorter than its 4-byte count");
  }
  const std::uint32_t count = detail::load_u32_le(data);
  ParameterSet ps;
  ps.entries.reserve(count);
  std::size_t pos = 4;
  std::set<std::string> seen;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string where = origin + ": entry " + std::to_string(e);
    if (size - pos < 2) {
      fail(errc::truncated_payload, where + " is missing its name length");
    }
    const std::size_t name_len = data[pos] | (std::size_t(data[pos + 1]) << 8);
    pos += 2;
    if (size - pos < name_len) {
      fail(errc::truncated_payload, where + " name overruns the container");
    }
    std::string name(reinterpret_cast<const char*>(data + pos), name_len);
    pos += name_len;
    const std::size_t tensor_size =
        detail::embedded_tensor_size(data + pos, size - pos, where);
    if (size - pos < tensor_size) {
      fail(errc::truncated_payload, where + " tensor overruns the container");
    }
    TensorFile t = parse_tensor(data + pos, tensor_size, where);
    pos += tensor_size;
    if (!seen.insert(name).second) {
      fail(errc::name_mismatch, where + " repeats tensor name '" + name + "'");
    }
    ps.entries.push_back({std::move(name), std::move(t)});
  }
  if (pos != size) {
    fail(errc::truncated_payload,
         origin + ": " + std::to_string(size - pos) +
             " trailing bytes after the last entry");
  }
  return ps;
}

inline ParameterSet read_parameter_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_failure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(errc::io_failure, "cannot read " + path.string());
  return parse_parameter_set(bytes.data(), bytes.size(), path.string());
}

inline void write_parameter_set(const ParameterSet& ps,
                                const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_parameter_set(ps);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(errc::io_failure, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(errc::io_failure, "cannot write " + path.string());
}

// Elementwise mean across checkpoints. Each element is summed in
// ascending value order in f64 and divided once, so the result is exact
// for the multiset of inputs: reordering the list cannot change it, and
// averaging N copies of a set returns that set.
inline ParameterSet average_parameters(const std::vector<ParameterSet>& sets) {
  if (sets.empty()) fail(errc::empty_list, "no parameter sets to average");
  const ParameterSet& first = sets[0];
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (sets[s].entries.size() != first.entries.size()) {
      fail(errc::name_mismatch,
           "set " + std::to_string(s) + " has " +
               std::to_string(sets[s].entries.size()) + " tensors, expected " +
               std::to_string(first.entries.size()));
    }
  }

  ParameterSet out;
  out.entries.reserve(first.entries.size());
  std::vector<double> gather(sets.size());
  for (std::size_t e = 0; e < first.entries.size(); ++e) {
    const Param& ref = first.entries[e];
    if (ref.tensor.dtype != Dtype::f32) {
      fail(errc::unsupported_dtype,
           "tensor '" + ref.name + "' is not f32; only f32 weights average");
    }
    for (std::size_t s = 1; s < sets.size(); ++s) {
      const Param& other = sets[s].entries[e];
      if (other.name != ref.name) {
        fail(errc::name_mismatch,
             "set " + std::to_string(s) + " entry " + std::to_string(e) +
                 " is named '" + other.name + "', expected '" + ref.name + "'");
      }
      if (other.tensor.dtype != ref.tensor.dtype ||
          other.tensor.dims != ref.tensor.dims) {
        fail(errc::shape_mismatch,
             "tensor '" + ref.name + "' differs in shape across sets");
      }
    }

    std::vector<std::vector<float>> decoded(sets.size());
    for (std::size_t s = 0; s < sets.size(); ++s) {
      decoded[s] = sets[s].entries[e].tensor.to_f32();
      for (float v : decoded[s]) {
        if (!std::isfinite(v)) {
          fail(errc::non_finite_input,
               "tensor '" + ref.name + "' in set " + std::to_string(s) +
                   " holds a non-finite value");
        }
      }
    }
    std::vector<float> mean(ref.tensor.element_count());
    for (std::size_t i = 0; i < mean.size(); ++i) {
      for (std::size_t s = 0; s < sets.size(); ++s) gather[s] = decoded[s][i];
      std::sort(gather.begin(), gather.end());
      double sum = 0.0;
      for (double v : gather) sum += v;
      mean[i] = static_cast<float>(sum / static_cast<double>(sets.size()));
    }
    Param averaged;
    averaged.name = ref.name;
    averaged.tensor = TensorFile::from_f32(ref.tensor.dims, mean);
    out.entries.push_back(std::move(averaged));
  }
  return out;
}

}  // namespace segfuse

#endif  // SEGFUSE_PARAMS_HPP_
