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

#ifndef SEGFUSE_DATASET_HPP_
#define SEGFUSE_DATASET_HPP_

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "segfuse/core.hpp"
#include "segfuse/error.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/parallel.hpp"

namespace segfuse {

// Total source-to-target lookup over the full byte range. Sources that were
// never declared read as kIgnoreLabel, and 255 itself can never be redirected,
// so remapped labels stay valid label maps by construction.
struct LabelRemap {
  std::array<std::uint8_t, 256> table;
  std::array<bool, 256> declared;

  LabelRemap() {
    table.fill(kIgnoreLabel);
    declared.fill(false);
  }

  std::uint8_t map(std::uint8_t source) const { return table[source]; }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::string at_line(const std::string& origin, std::size_t line_no) {
  return origin + ":" + std::to_string(line_no) + ": ";
}

inline int parse_class_field(std::string_view field, const std::string& origin,
                             std::size_t line_no, const char* which) {
  field = trim(field);
  long value = 0;
  const auto [ptr, ec] =
      std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size())
    fail(errc::parse_error, at_line(origin, line_no) + "malformed " + which +
                                " class id `" + std::string(field) + "`");
  if (value < 0 || value > 255)
    fail(errc::id_out_of_range, at_line(origin, line_no) + which +
                                    " class id " + std::to_string(value) +
                                    " outside 0..255");
  return static_cast<int>(value);
}

}  // namespace detail

// Parses `source_id,target_id` rows. `#` starts a comment; blank lines are
// skipped. Line numbers in errors are 1-based over the raw text.
inline LabelRemap parse_remap(const std::string& text,
                              const std::string& origin = "<memory>") {
  LabelRemap remap;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos)
      fail(errc::parse_error, detail::at_line(origin, line_no) +
                                  "expected `source_id,target_id`");
    const int source = detail::parse_class_field(line.substr(0, comma), origin,
                                                 line_no, "source");
    const int target = detail::parse_class_field(line.substr(comma + 1), origin,
                                                 line_no, "target");
    if (source == kIgnoreLabel && target != kIgnoreLabel)
      fail(errc::id_out_of_range,
           detail::at_line(origin, line_no) +
               "source id 255 is reserved for the ignore label");
    if (remap.declared[source])
      fail(errc::duplicate_source, detail::at_line(origin, line_no) +
                                       "duplicate source id " +
                                       std::to_string(source));
    remap.declared[static_cast<std::size_t>(source)] = true;
    remap.table[static_cast<std::size_t>(source)] =
        static_cast<std::uint8_t>(target);
  }
  return remap;
}

inline LabelRemap load_remap(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_failure, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) fail(errc::io_failure, "read failed on " + path.string());
  return parse_remap(text, path.string());
}

inline LabelMap remap_labels(const LabelMap& lbl, const LabelRemap& m) {
  LabelMap out = LabelMap::make(lbl.height, lbl.width);
  for (std::size_t i = 0; i < lbl.data.size(); ++i)
    out.data[i] = m.table[lbl.data[i]];
  return out;
}

struct ManifestRecord {
  std::string image;
  std::string label;
  std::string tag;

  friend bool operator==(const ManifestRecord&,
                         const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  // Distinct tags in sorted order; the manifest itself declares the tag set.
  std::vector<std::string> tags() const {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.tag);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  friend bool operator==(const DatasetManifest&,
                         const DatasetManifest&) = default;
};

inline constexpr std::string_view kManifestMarker = "segfuse-manifest";
inline constexpr int kManifestVersion = 1;

namespace detail {

inline void require_manifest_field(const std::string& value, const char* which,
                                   const std::string& origin,
                                   std::size_t line_no) {
  if (value.empty())
    fail(errc::parse_error,
         at_line(origin, line_no) + std::string("empty ") + which);
  if (value.find('\t') != std::string::npos ||
      value.find('\n') != std::string::npos)
    fail(errc::bad_argument, std::string(which) + " `" + value +
                                 "` contains a tab or newline");
}

}  // namespace detail

// One record per line, fields tab-separated. The leading comment line pins
// the format version so future layouts can be rejected instead of misread.
inline std::string serialize_manifest(const DatasetManifest& manifest) {
  std::string out = "# ";
  out += kManifestMarker;
  out += " v" + std::to_string(kManifestVersion) + "\n";
  std::size_t line_no = 1;
  for (const auto& r : manifest.records) {
    ++line_no;
    detail::require_manifest_field(r.image, "image path", "<manifest>", line_no);
    detail::require_manifest_field(r.label, "label path", "<manifest>", line_no);
    detail::require_manifest_field(r.tag, "tag", "<manifest>", line_no);
    out += r.image;
    out += '\t';
    out += r.label;
    out += '\t';
    out += r.tag;
    out += '\n';
  }
  return out;
}

inline DatasetManifest parse_manifest(const std::string& text,
                                      const std::string& origin = "<memory>") {
  DatasetManifest manifest;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string_view trimmed = detail::trim(raw);
    if (trimmed.empty()) continue;
    if (trimmed.front() == '#') {
      const std::string_view body = detail::trim(trimmed.substr(1));
      if (body.substr(0, kManifestMarker.size()) == kManifestMarker) {
        const std::string_view version =
            detail::trim(body.substr(kManifestMarker.size()));
        if (version != "v" + std::to_string(kManifestVersion))
          fail(errc::unsupported_version,
               detail::at_line(origin, line_no) + "manifest version `" +
                   std::string(version) + "` not supported");
      }
      continue;
    }
    // Paths may contain spaces, so fields split on raw tabs only.
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = raw.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(raw.substr(start));
        break;
      }
      fields.push_back(raw.substr(start, tab - start));
      start = tab + 1;
    }
    if (fields.size() != 3)
      fail(errc::parse_error,
           detail::at_line(origin, line_no) +
               "expected `image<TAB>label<TAB>tag`, got " +
               std::to_string(fields.size()) + " fields");
    detail::require_manifest_field(fields[0], "image path", origin, line_no);
    detail::require_manifest_field(fields[1], "label path", origin, line_no);
    detail::require_manifest_field(fields[2], "tag", origin, line_no);
    manifest.records.push_back({std::move(fields[0]), std::move(fields[1]),
                                std::move(fields[2])});
  }
  return manifest;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_failure, "cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) fail(errc::io_failure, "read failed on " + path.string());
  return parse_manifest(text, path.string());
}

inline void save_manifest(const DatasetManifest& manifest,
                          const std::filesystem::path& path) {
  const std::string text = serialize_manifest(manifest);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(errc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) fail(errc::io_failure, "write failed on " + path.string());
}

// Loads the label map behind a record. Must be safe to call from several
// threads at once on distinct records.
using LabelLoader = std::function<LabelMap(const ManifestRecord&)>;

struct CoverageEntry {
  ManifestRecord record;
  double coverage = 0.0;  // fraction annotated after remapping
};

struct FilterFailure {
  ManifestRecord record;
  std::string reason;
};

struct FilterOutcome {
  std::vector<CoverageEntry> kept;
  std::vector<CoverageEntry> dropped;
  std::vector<FilterFailure> errors;
};

// Partitions records by annotated coverage of the remapped label: kept when
// coverage >= threshold, dropped below it, and loader failures captured per
// record instead of aborting the run. Input order is preserved inside each
// partition regardless of the worker count.
inline FilterOutcome filter_by_coverage(const DatasetManifest& manifest,
                                        const LabelRemap& remap,
                                        double threshold,
                                        const LabelLoader& load_label,
                                        int threads = 0) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    fail(errc::bad_argument, "coverage threshold must lie in [0, 1]");
  if (!load_label) fail(errc::bad_argument, "label loader is empty");

  enum class Status : std::uint8_t { kKept, kDropped, kFailed };
  struct PerRecord {
    Status status = Status::kFailed;
    double coverage = 0.0;
    std::string reason;
  };

  const std::size_t n = manifest.records.size();
  std::vector<PerRecord> results(n);
  parallel_for(n, resolve_threads(threads),
               [&](std::size_t, std::size_t begin, std::size_t end) {
                 for (std::size_t i = begin; i < end; ++i) {
                   PerRecord& r = results[i];
                   try {
                     const LabelMap mapped =
                         remap_labels(load_label(manifest.records[i]), remap);
                     r.coverage = coverage(mapped);
                     r.status = r.coverage >= threshold ? Status::kKept
                                                        : Status::kDropped;
                   } catch (const std::exception& e) {
                     r.status = Status::kFailed;
                     r.reason = e.what();
                   } catch (...) {
                     r.status = Status::kFailed;
                     r.reason = "unknown error";
                   }
                 }
               });

  FilterOutcome outcome;
  for (std::size_t i = 0; i < n; ++i) {
    const PerRecord& r = results[i];
    switch (r.status) {
      case Status::kKept:
        outcome.kept.push_back({manifest.records[i], r.coverage});
        break;
      case Status::kDropped:
        outcome.dropped.push_back({manifest.records[i], r.coverage});
        break;
      case Status::kFailed:
        outcome.errors.push_back({manifest.records[i], r.reason});
        break;
    }
  }
  return outcome;
}

}  // namespace segfuse

#endif  // SEGFUSE_DATASET_HPP_
