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

#ifndef SEGFUSE_ERROR_HPP_
#define SEGFUSE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace segfuse {

enum class errc {
  bad_magic,
  unsupported_version,
  unsupported_dtype,
  truncated_payload,
  io_failure,
  shape_mismatch,
  class_out_of_range,
  empty_matrix,
  all_zero_counts,
  missing_weights,
  missing_confusion,
  all_ignored,
  empty_list,
  class_count_mismatch,
  name_mismatch,
  non_finite_input,
  empty_dataset,
  duplicate_source,
  id_out_of_range,
  parse_error,
  unreadable_label,
  bad_argument,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::bad_magic: return "BadMagic";
    case errc::unsupported_version: return "UnsupportedVersion";
    case errc::unsupported_dtype: return "UnsupportedDtype";
    case errc::truncated_payload: return "TruncatedPayload";
    case errc::io_failure: return "IoFailure";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::class_out_of_range: return "ClassOutOfRange";
    case errc::empty_matrix: return "EmptyMatrix";
    case errc::all_zero_counts: return "AllZeroCounts";
    case errc::missing_weights: return "MissingWeights";
    case errc::missing_confusion: return "MissingConfusion";
    case errc::all_ignored: return "AllIgnored";
    case errc::empty_list: return "EmptyList";
    case errc::class_count_mismatch: return "ClassCountMismatch";
    case errc::name_mismatch: return "NameMismatch";
    case errc::non_finite_input: return "NonFiniteInput";
    case errc::empty_dataset: return "EmptyDataset";
    case errc::duplicate_source: return "DuplicateSource";
    case errc::id_out_of_range: return "IdOutOfRange";
    case errc::parse_error: return "ParseError";
    case errc::unreadable_label: return "UnreadableLabel";
    case errc::bad_argument: return "BadArgument";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  errc code() const { return code_; }

  // I/O-class failures map to CLI exit code 2, everything else to 1.
  bool is_io() const {
    return code_ == errc::io_failure || code_ == errc::unreadable_label;
  }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace segfuse

#endif  // SEGFUSE_ERROR_HPP_
