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

// segfuse: one binary, one subcommand per pipeline stage. Results go to
// stdout, diagnostics to stderr. Exit codes: 0 success, 1 validation
// error, 2 I/O error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "png_label.hpp"
#include "segfuse/augment.hpp"
#include "segfuse/class_weights.hpp"
#include "segfuse/core.hpp"
#include "segfuse/dataset.hpp"
#include "segfuse/error.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/losses.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/parallel.hpp"
#include "segfuse/params.hpp"
#include "segfuse/tensor_io.hpp"

namespace {

namespace fs = std::filesystem;
using namespace segfuse;

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string fixed6(double v) { return fixed(v, 6); }

std::string zero_padded(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

bool has_extension(const fs::path& p, const char* ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

// Labels arrive as SEGT tensors or 8-bit grayscale PNGs; everything else
// travels as SEGT only.
LabelMap load_label_any(const fs::path& path) {
  if (has_extension(path, ".png"))
    return segfuse_tools::read_gray8_png(path);
  return label_from_tensor(read_tensor(path), path.string());
}

ChannelVolume load_volume(const fs::path& path) {
  return volume_from_tensor(read_tensor(path), path.string());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    fail(errc::io_failure, "cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) fail(errc::io_failure, "write failed on " + path.string());
}

// Maps relative stem (subdirectories included, extension dropped) to the
// file path. Two files sharing a stem (x.png next to x.segt) would pair
// ambiguously, so that is a hard error.
std::map<std::string, fs::path> index_directory(const fs::path& dir) {
  if (!fs::is_directory(dir))
    fail(errc::io_failure, dir.string() + " is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (!has_extension(p, ".segt") && !has_extension(p, ".png")) continue;
    const fs::path rel = fs::relative(p, dir);
    const std::string stem = (rel.parent_path() / rel.stem()).generic_string();
    if (!out.emplace(stem, p).second)
      fail(errc::bad_argument,
           "duplicate stem `" + stem + "` under " + dir.string());
  }
  return out;
}

struct PairedFrame {
  std::string stem;
  std::vector<fs::path> files;  // one per input root, same order as roots
};

// Pairs files across N roots by identical relative stems. Every root must
// provide exactly the same stem set; silent partial pairing corrupts
// evaluation, so mismatches are fatal and name the offending stems.
std::vector<PairedFrame> pair_roots(const std::vector<fs::path>& roots,
                                    const std::vector<std::string>& names) {
  const bool all_files = std::all_of(roots.begin(), roots.end(), [](auto& r) {
    return fs::is_regular_file(r);
  });
  if (all_files) {
    PairedFrame one;
    one.stem = roots[0].stem().string();
    one.files.assign(roots.begin(), roots.end());
    return {one};
  }

  std::vector<std::map<std::string, fs::path>> indexes;
  indexes.reserve(roots.size());
  for (const auto& root : roots) indexes.push_back(index_directory(root));

  for (std::size_t i = 1; i < indexes.size(); ++i) {
    std::string missing;
    int shown = 0;
    for (const auto& [stem, _] : indexes[0]) {
      if (!indexes[i].count(stem) && shown < 5) {
        missing += " `" + stem + "`";
        ++shown;
      }
    }
    for (const auto& [stem, _] : indexes[i]) {
      if (!indexes[0].count(stem) && shown < 5) {
        missing += " `" + stem + "`";
        ++shown;
      }
    }
    if (!missing.empty())
      fail(errc::bad_argument, "stems differ between " + names[0] + " and " +
                                   names[i] + ":" + missing);
    if (indexes[i].size() != indexes[0].size())
      fail(errc::bad_argument,
           "stems differ between " + names[0] + " and " + names[i]);
  }
  if (indexes[0].empty())
    fail(errc::empty_dataset, "no .segt or .png files under " +
                                  roots[0].string());

  std::vector<PairedFrame> out;
  out.reserve(indexes[0].size());
  for (const auto& [stem, path] : indexes[0]) {
    PairedFrame frame;
    frame.stem = stem;
    frame.files.push_back(path);
    for (std::size_t i = 1; i < indexes.size(); ++i)
      frame.files.push_back(indexes[i].at(stem));
    out.push_back(std::move(frame));
  }
  return out;
}

bool matrix_has_counts(const ConfusionMatrix& cm) {
  for (int g = 0; g < cm.num_classes(); ++g)
    for (int p = 0; p < cm.num_classes(); ++p)
      if (cm.at(g, p) > 0) return true;
  return false;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string gt;
  std::string pred;
  int classes = 0;  // 0 = infer from the data
  std::string csv;
  std::string confusion_out;
  bool per_video = false;
  int threads = 0;
};

void run_eval(const EvalOpts& o) {
  const std::vector<PairedFrame> frames =
      pair_roots({o.gt, o.pred}, {"--gt", "--pred"});
  const std::size_t n = frames.size();
  const int threads = resolve_threads(o.threads);

  int k = o.classes;
  if (k == 0) {
    // Inference pass: the largest non-ignore id on either side fixes K.
    std::vector<int> slot_max(std::min<std::size_t>(threads, n), -1);
    parallel_for(n, threads, [&](std::size_t slot, std::size_t begin,
                                 std::size_t end) {
      int local = -1;
      for (std::size_t i = begin; i < end; ++i) {
        for (const fs::path& file : frames[i].files) {
          const LabelMap lbl = load_label_any(file);
          for (std::uint8_t v : lbl.data)
            if (v != kIgnoreLabel) local = std::max(local, int(v));
        }
      }
      slot_max[slot] = local;
    });
    for (int m : slot_max) k = std::max(k, m + 1);
    if (k == 0)
      fail(errc::empty_matrix,
           "cannot infer the class count: every pixel is 255; pass --classes");
  }
  if (k < 1 || k > 255)
    fail(errc::class_out_of_range, "class count must lie in [1, 255]");

  // Frames group by the parent of their relative stem; without --per-video
  // everything lands in one group.
  std::vector<std::string> videos;
  std::vector<std::size_t> video_of(n, 0);
  if (o.per_video) {
    std::map<std::string, std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& stem = frames[i].stem;
      const auto slash = stem.rfind('/');
      const std::string parent =
          slash == std::string::npos ? "(root)" : stem.substr(0, slash);
      auto [it, inserted] = ids.emplace(parent, ids.size());
      video_of[i] = it->second;
    }
    videos.resize(ids.size());
    for (const auto& [name, id] : ids) videos[id] = name;
  } else {
    videos.push_back("");
  }

  const std::size_t slots = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  std::vector<std::vector<ConfusionMatrix>> acc(
      slots, std::vector<ConfusionMatrix>(videos.size(), ConfusionMatrix(k)));
  parallel_for(n, threads,
               [&](std::size_t slot, std::size_t begin, std::size_t end) {
                 for (std::size_t i = begin; i < end; ++i) {
                   const LabelMap gt = load_label_any(frames[i].files[0]);
                   const LabelMap pred = load_label_any(frames[i].files[1]);
                   if (!gt.same_shape(pred))
                     fail(errc::shape_mismatch,
                          "frame `" + frames[i].stem +
                              "` has mismatched label shapes");
                   acc[slot][video_of[i]].accumulate(gt, pred);
                 }
               });
  for (std::size_t slot = 1; slot < slots; ++slot)
    for (std::size_t v = 0; v < videos.size(); ++v)
      acc[0][v].merge(acc[slot][v]);

  ConfusionMatrix global(k);
  for (const ConfusionMatrix& cm : acc[0]) global.merge(cm);
  const IouReport report = miou(global);

  std::string text;
  for (int c = 0; c < k; ++c) {
    text += "class " + std::to_string(c) + ": ";
    text += report.per_class[c] ? fixed6(*report.per_class[c]) : "absent";
    text += '\n';
  }
  if (o.per_video) {
    for (std::size_t v = 0; v < videos.size(); ++v) {
      text += "video " + videos[v] + ": ";
      text += matrix_has_counts(acc[0][v])
                  ? fixed6(miou(acc[0][v]).mean_iou)
                  : std::string("absent");
      text += '\n';
    }
  }
  text += "mIoU: " + fixed6(report.mean_iou) + '\n';
  std::cout << text;

  if (!o.csv.empty()) {
    std::string csv = "class_id,iou\n";
    for (int c = 0; c < k; ++c)
      if (report.per_class[c])
        csv += std::to_string(c) + "," + fixed6(*report.per_class[c]) + "\n";
    csv += "miou," + fixed6(report.mean_iou) + "\n";
    write_text_file(o.csv, csv);
  }
  if (!o.confusion_out.empty()) {
    std::vector<float> counts;
    counts.reserve(static_cast<std::size_t>(k) * k);
    for (int g = 0; g < k; ++g)
      for (int p = 0; p < k; ++p)
        counts.push_back(static_cast<float>(global.at(g, p)));
    write_tensor(TensorFile::from_f32({static_cast<std::uint32_t>(k),
                                       static_cast<std::uint32_t>(k)},
                                      counts),
                 o.confusion_out);
  }
  std::cerr << "evaluated " << n << " frame pair" << (n == 1 ? "" : "s")
            << " over " << k << " classes\n";
}

// ---------------------------------------------------------------------------
// class-weights

struct ClassWeightOpts {
  std::string manifest;
  std::string labels_dir;
  int classes = 0;
  std::string csv;
  std::string out;
  int threads = 0;
};

void run_class_weights(const ClassWeightOpts& o) {
  if (o.manifest.empty() == o.labels_dir.empty())
    fail(errc::bad_argument, "pass exactly one of --manifest or --labels");
  if (o.classes < 1 || o.classes > 255)
    fail(errc::class_out_of_range, "--classes must lie in [1, 255]");

  std::vector<fs::path> label_paths;
  if (!o.manifest.empty()) {
    const DatasetManifest manifest = load_manifest(o.manifest);
    for (const auto& r : manifest.records) label_paths.emplace_back(r.label);
  } else {
    for (const auto& [stem, path] : index_directory(o.labels_dir))
      label_paths.push_back(path);
  }
  if (label_paths.empty()) fail(errc::empty_dataset, "no label maps to count");

  const int threads = resolve_threads(o.threads);
  const std::size_t n = label_paths.size();
  const std::size_t slots = std::max<std::size_t>(
      1, std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  std::vector<PixelCounts> acc(slots, PixelCounts::zeros(o.classes));
  parallel_for(n, threads,
               [&](std::size_t slot, std::size_t begin, std::size_t end) {
                 for (std::size_t i = begin; i < end; ++i)
                   accumulate_pixel_counts(acc[slot],
                                           load_label_any(label_paths[i]));
               });
  for (std::size_t slot = 1; slot < slots; ++slot) acc[0].merge(acc[slot]);

  const ClassWeights weights = compute_weights(acc[0]);

  std::string csv = "class_id,count,weight\n";
  for (int c = 0; c < o.classes; ++c) {
    csv += std::to_string(c) + "," + std::to_string(acc[0].counts[c]) + "," +
           fixed6(weights.weights[c]) + "\n";
    if (acc[0].counts[c] == 0)
      std::cerr << "class " << c << " has no pixels; weight is 0\n";
  }
  std::cout << csv;
  if (!o.csv.empty()) write_text_file(o.csv, csv);
  if (!o.out.empty()) {
    std::vector<float> w(weights.weights.begin(), weights.weights.end());
    write_tensor(TensorFile::from_f32(
                     {static_cast<std::uint32_t>(o.classes)}, w),
                 o.out);
  }
  std::cerr << "counted " << n << " label map" << (n == 1 ? "" : "s") << "\n";
}

// ---------------------------------------------------------------------------
// loss-check

struct LossCheckOpts {
  std::string loss;
  std::string logits;
  std::string gt;
  std::string weights;
  std::string confusion;
  double eps = 1e-3;
};

LossKind parse_loss_kind(const std::string& name) {
  if (name == "weighted-ce") return LossKind::weighted_ce;
  if (name == "pixel-distribution") return LossKind::pixel_distribution;
  if (name == "confusion-focal") return LossKind::confusion_focal;
  fail(errc::bad_argument,
       "unknown loss `" + name +
           "`; expected weighted-ce, pixel-distribution, or confusion-focal");
}

ConfusionMatrix confusion_from_tensor(const TensorFile& t,
                                      const std::string& origin) {
  if (t.dims.size() != 2 || t.dims[0] != t.dims[1])
    fail(errc::shape_mismatch, origin + ": confusion matrix must be square");
  const int k = static_cast<int>(t.dims[0]);
  ConfusionMatrix cm(k);
  if (t.dtype == Dtype::u8) {
    for (int g = 0; g < k; ++g)
      for (int p = 0; p < k; ++p)
        cm.at(g, p) = t.payload[static_cast<std::size_t>(g) * k + p];
    return cm;
  }
  const std::vector<float> values = t.to_f32();
  for (int g = 0; g < k; ++g) {
    for (int p = 0; p < k; ++p) {
      const float v = values[static_cast<std::size_t>(g) * k + p];
      const double rounded = std::nearbyint(static_cast<double>(v));
      if (!(v >= 0.0f) || std::abs(v - rounded) > 1e-6 * std::max(1.0, rounded))
        fail(errc::bad_argument,
             origin + ": confusion entries must be non-negative counts");
      cm.at(g, p) = static_cast<std::uint64_t>(rounded);
    }
  }
  return cm;
}

void run_loss_check(const LossCheckOpts& o) {
  if (!(o.eps > 0.0))
    fail(errc::bad_argument, "--eps must be positive");
  const LossKind kind = parse_loss_kind(o.loss);

  LossBatch batch;
  batch.logits = load_volume(o.logits);
  batch.gt = load_label_any(o.gt);
  if (!o.weights.empty()) {
    const TensorFile t = read_tensor(o.weights);
    if (t.dtype != Dtype::f32 || t.dims.size() != 1)
      fail(errc::shape_mismatch,
           o.weights + ": class weights must be a rank-1 f32 tensor");
    const std::vector<float> w = t.to_f32();
    batch.weights = ClassWeights{std::vector<double>(w.begin(), w.end())};
  }
  if (!o.confusion.empty())
    batch.confusion =
        confusion_from_tensor(read_tensor(o.confusion), o.confusion);

  const LossResult result = compute_loss(kind, batch);
  const GradCheckReport check = check_gradients(kind, batch, o.eps);

  std::cout << "loss: " << fixed(result.value, 9) << "\n"
            << "max_rel_grad_err: " << fixed(check.max_rel_err, 9) << "\n";
  std::cerr << "counted " << result.counted_pixels << " pixels, compared "
            << check.entries_compared << " gradient entries, skipped "
            << check.pixels_skipped << " near-tie pixels\n";
}

// ---------------------------------------------------------------------------
// augment

struct AugmentOpts {
  std::string manifest;
  std::string out_dir;
  std::uint64_t seed = 0;
  int crop_h = 480;
  int crop_w = 853;
  bool dump_draws = false;
  int threads = 0;
};

std::string onoff(bool on, double value) {
  return on ? "on:" + fixed6(value) : std::string("off");
}

void run_augment(const AugmentOpts& o) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  if (manifest.records.empty())
    fail(errc::empty_dataset, "manifest has no records");
  fs::create_directories(o.out_dir);

  AugmentConfig cfg;
  cfg.crop_h = o.crop_h;
  cfg.crop_w = o.crop_w;
  cfg.seed = o.seed;

  const std::size_t n = manifest.records.size();
  std::vector<AugmentTrace> traces(n);
  DatasetManifest out_manifest;
  out_manifest.records.resize(n);

  parallel_for(n, resolve_threads(o.threads),
               [&](std::size_t, std::size_t begin, std::size_t end) {
                 for (std::size_t i = begin; i < end; ++i) {
                   const ManifestRecord& rec = manifest.records[i];
                   const Image img = image_from_tensor(
                       read_tensor(rec.image), rec.image);
                   const LabelMap lbl = load_label_any(rec.label);
                   const auto [aimg, albl] =
                       augment(img, lbl, cfg, i, &traces[i]);
                   const std::string base =
                       zero_padded(i) + "_" + fs::path(rec.image).stem().string();
                   const fs::path img_out =
                       fs::path(o.out_dir) / (base + ".img.segt");
                   const fs::path lbl_out =
                       fs::path(o.out_dir) / (base + ".lbl.segt");
                   write_tensor(to_tensor(aimg), img_out);
                   write_tensor(to_tensor(albl), lbl_out);
                   out_manifest.records[i] = {img_out.string(),
                                              lbl_out.string(), rec.tag};
                 }
               });
  save_manifest(out_manifest, fs::path(o.out_dir) / "manifest.tsv");

  if (o.dump_draws) {
    for (std::size_t i = 0; i < n; ++i) {
      const AugmentTrace& t = traces[i];
      std::cout << "record " << i << " image="
                << manifest.records[i].image
                << " alpha=" << fixed6(t.scale.alpha)
                << " beta1=" << fixed6(t.scale.beta1)
                << " beta2=" << fixed6(t.scale.beta2)
                << " resize=" << t.resize_h << "x" << t.resize_w
                << " crop=" << t.crop_row << "," << t.crop_col
                << " flip=" << (t.flipped ? 1 : 0)
                << " brightness=" << onoff(t.brightness_on, t.brightness)
                << " contrast=" << onoff(t.contrast_on, t.contrast)
                << " saturation=" << onoff(t.saturation_on, t.saturation)
                << " hue=" << onoff(t.hue_on, t.hue_deg) << "\n";
    }
  }
  std::cerr << "augmented " << n << " record" << (n == 1 ? "" : "s")
            << " into " << o.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// fuse-tta

struct FuseTtaOpts {
  std::vector<std::string> specs;
  std::string out;
  int base_height = 0;
  int base_width = 0;
  std::string confidence_out;
};

// `path@scale[@flip]`: tokens after the path are an optional scale factor
// and an optional literal `flip`, in that order. Paths therefore must not
// contain `@`.
TtaPrediction parse_variant_spec(const std::string& spec) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t at = spec.find('@', start);
    if (at == std::string::npos) {
      parts.push_back(spec.substr(start));
      break;
    }
    parts.push_back(spec.substr(start, at - start));
    start = at + 1;
  }
  if (parts[0].empty() || parts.size() > 3)
    fail(errc::bad_argument,
         "variant `" + spec + "` is not path@scale[@flip]");

  TtaPrediction pred;
  pred.probs = load_volume(parts[0]);
  std::size_t next = 1;
  if (parts.size() > next && parts[next] != "flip") {
    std::size_t used = 0;
    try {
      pred.scale = std::stod(parts[next], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != parts[next].size() || !(pred.scale > 0.0))
      fail(errc::bad_argument,
           "variant `" + spec + "` has a bad scale `" + parts[next] + "`");
    ++next;
  }
  if (parts.size() > next) {
    if (parts[next] != "flip")
      fail(errc::bad_argument,
           "variant `" + spec + "` has an unknown token `" + parts[next] + "`");
    pred.flipped = true;
    ++next;
  }
  if (parts.size() > next)
    fail(errc::bad_argument, "variant `" + spec + "` has trailing tokens");
  return pred;
}

void run_fuse_tta(const FuseTtaOpts& o) {
  if ((o.base_height == 0) != (o.base_width == 0))
    fail(errc::bad_argument,
         "--base-height and --base-width must be given together");

  std::vector<TtaPrediction> preds;
  preds.reserve(o.specs.size());
  for (const std::string& spec : o.specs)
    preds.push_back(parse_variant_spec(spec));

  int base_h = o.base_height;
  int base_w = o.base_width;
  if (base_h == 0) {
    // Default base resolution: the first scale-1.0 variant, else the first.
    const TtaPrediction* base = &preds[0];
    for (const TtaPrediction& p : preds) {
      if (p.scale == 1.0) {
        base = &p;
        break;
      }
    }
    base_h = base->probs.height;
    base_w = base->probs.width;
  }

  const SoftPrediction fused = fuse_tta(preds, base_h, base_w);
  write_tensor(to_tensor(fused), o.out);
  if (!o.confidence_out.empty()) {
    const FloatMap conf = score_threshold_report(fused);
    write_tensor(TensorFile::from_f32(
                     {static_cast<std::uint32_t>(conf.height),
                      static_cast<std::uint32_t>(conf.width)},
                     conf.data),
                 o.confidence_out);
  }
  std::cerr << "fused " << preds.size() << " variant"
            << (preds.size() == 1 ? "" : "s") << " at " << base_h << "x"
            << base_w << "\n";
}

// ---------------------------------------------------------------------------
// aggregate

struct AggregateOpts {
  std::string input_a;
  std::string input_b;
  double gamma = 0.5;
  std::string out;
};

void run_aggregate(const AggregateOpts& o) {
  const SoftPrediction a = load_volume(o.input_a);
  const SoftPrediction b = load_volume(o.input_b);
  const SoftPrediction blended = aggregate(a, b, {o.gamma});
  write_tensor(to_tensor(blended), o.out);
  std::cerr << "aggregated with gamma " << fixed6(o.gamma) << "\n";
}

// ---------------------------------------------------------------------------
// gamma-search

struct GammaSearchOpts {
  std::string gt;
  std::string pred_a;
  std::string pred_b;
  double step = 0.01;
  int threads = 0;
};

void run_gamma_search(const GammaSearchOpts& o) {
  const std::vector<PairedFrame> frames =
      pair_roots({o.gt, o.pred_a, o.pred_b}, {"--gt", "--pred-a", "--pred-b"});
  const std::size_t n = frames.size();

  std::vector<LabelMap> gts(n);
  std::vector<SoftPrediction> ps(n), pv(n);
  parallel_for(n, resolve_threads(o.threads),
               [&](std::size_t, std::size_t begin, std::size_t end) {
                 for (std::size_t i = begin; i < end; ++i) {
                   gts[i] = load_label_any(frames[i].files[0]);
                   ps[i] = load_volume(frames[i].files[1]);
                   pv[i] = load_volume(frames[i].files[2]);
                 }
               });

  const GammaSearchResult result =
      gamma_search(ps, pv, gts, o.step, resolve_threads(o.threads));

  std::string csv = "gamma,miou\n";
  for (const GammaScore& score : result.curve)
    csv += fixed6(score.gamma) + "," + fixed6(score.miou) + "\n";
  std::cout << csv;
  std::cerr << "best gamma " << fixed6(result.gamma) << " with mIoU "
            << fixed6(result.miou) << " over " << n << " frame"
            << (n == 1 ? "" : "s") << "\n";
}

// ---------------------------------------------------------------------------
// avg-weights

struct AvgWeightsOpts {
  std::vector<std::string> inputs;
  std::string out;
};

void run_avg_weights(const AvgWeightsOpts& o) {
  std::vector<ParameterSet> sets;
  sets.reserve(o.inputs.size());
  for (const std::string& path : o.inputs)
    sets.push_back(read_parameter_set(path));
  write_parameter_set(average_parameters(sets), o.out);
  std::cerr << "averaged " << sets.size() << " parameter set"
            << (sets.size() == 1 ? "" : "s") << "\n";
}

// ---------------------------------------------------------------------------
// remap

struct RemapOpts {
  std::string manifest;
  std::string map;
  std::string out_dir;
  std::string manifest_out;
  std::string report;
  int threads = 0;
};

void run_remap(const RemapOpts& o) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  if (manifest.records.empty())
    fail(errc::empty_dataset, "manifest has no records");
  const LabelRemap remap = load_remap(o.map);
  fs::create_directories(o.out_dir);

  const std::size_t n = manifest.records.size();
  DatasetManifest out_manifest;
  out_manifest.records.resize(n);
  std::vector<double> coverages(n, 0.0);

  parallel_for(n, resolve_threads(o.threads),
               [&](std::size_t, std::size_t begin, std::size_t end) {
                 for (std::size_t i = begin; i < end; ++i) {
                   const ManifestRecord& rec = manifest.records[i];
                   const LabelMap mapped =
                       remap_labels(load_label_any(rec.label), remap);
                   const fs::path out_path =
                       fs::path(o.out_dir) /
                       (zero_padded(i) + "_" +
                        fs::path(rec.label).stem().string() + ".segt");
                   write_tensor(to_tensor(mapped), out_path);
                   coverages[i] = coverage(mapped);
                   out_manifest.records[i] = {rec.image, out_path.string(),
                                              rec.tag};
                 }
               });

  if (o.manifest_out.empty())
    std::cout << serialize_manifest(out_manifest);
  else
    save_manifest(out_manifest, o.manifest_out);

  if (!o.report.empty()) {
    std::string csv = "image,label,tag,coverage\n";
    for (std::size_t i = 0; i < n; ++i) {
      const ManifestRecord& rec = out_manifest.records[i];
      csv += rec.image + "," + rec.label + "," + rec.tag + "," +
             fixed6(coverages[i]) + "\n";
    }
    write_text_file(o.report, csv);
  }
  std::cerr << "remapped " << n << " label map" << (n == 1 ? "" : "s")
            << " into " << o.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// filter

struct FilterOpts {
  std::string manifest;
  std::string map;
  double threshold = 0.8;
  std::string kept_out;
  std::string dropped_out;
  std::string report;
  int threads = 0;
};

LabelRemap identity_remap() {
  LabelRemap m;
  for (int s = 0; s < 256; ++s) {
    m.table[static_cast<std::size_t>(s)] = static_cast<std::uint8_t>(s);
    m.declared[static_cast<std::size_t>(s)] = true;
  }
  return m;
}

void run_filter(const FilterOpts& o) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  const LabelRemap remap = o.map.empty() ? identity_remap() : load_remap(o.map);

  const FilterOutcome outcome = filter_by_coverage(
      manifest, remap, o.threshold,
      [](const ManifestRecord& rec) { return load_label_any(rec.label); },
      o.threads);

  DatasetManifest kept, dropped;
  for (const CoverageEntry& e : outcome.kept) kept.records.push_back(e.record);
  for (const CoverageEntry& e : outcome.dropped)
    dropped.records.push_back(e.record);

  if (o.kept_out.empty())
    std::cout << serialize_manifest(kept);
  else
    save_manifest(kept, o.kept_out);
  if (!o.dropped_out.empty()) save_manifest(dropped, o.dropped_out);

  if (!o.report.empty()) {
    std::string csv = "image,label,tag,status,coverage\n";
    for (const CoverageEntry& e : outcome.kept)
      csv += e.record.image + "," + e.record.label + "," + e.record.tag +
             ",kept," + fixed6(e.coverage) + "\n";
    for (const CoverageEntry& e : outcome.dropped)
      csv += e.record.image + "," + e.record.label + "," + e.record.tag +
             ",dropped," + fixed6(e.coverage) + "\n";
    for (const FilterFailure& e : outcome.errors)
      csv += e.record.image + "," + e.record.label + "," + e.record.tag +
             ",error,\n";
    write_text_file(o.report, csv);
  }

  for (const FilterFailure& e : outcome.errors)
    std::cerr << "error: " << e.record.label << ": " << e.reason << "\n";
  std::cerr << "kept " << outcome.kept.size() << ", dropped "
            << outcome.dropped.size() << ", " << outcome.errors.size()
            << " unreadable\n";
}

// ---------------------------------------------------------------------------
// wiring

void register_eval(CLI::App& app) {
  auto o = std::make_shared<EvalOpts>();
  CLI::App* sub = app.add_subcommand(
      "eval", "Score predicted label maps against ground truth (mIoU)");
  sub->add_option("--gt", o->gt, "Ground-truth label file or directory")
      ->required();
  sub->add_option("--pred", o->pred, "Predicted label file or directory")
      ->required();
  sub->add_option("--classes", o->classes,
                  "Class count K (default: inferred from the labels)");
  sub->add_option("--csv", o->csv, "Write class_id,iou CSV to this path");
  sub->add_option("--confusion-out", o->confusion_out,
                  "Write the KxK confusion matrix as an f32 tensor");
  sub->add_flag("--per-video", o->per_video,
                "Also report mIoU per parent directory");
  sub->add_option("--threads", o->threads,
                  "Worker threads (default: SEGFUSE_THREADS or all cores)");
  sub->callback([o] { run_eval(*o); });
}

void register_class_weights(CLI::App& app) {
  auto o = std::make_shared<ClassWeightOpts>();
  CLI::App* sub = app.add_subcommand(
      "class-weights", "Compute sqrt-balanced class weights from label maps");
  sub->add_option("--manifest", o->manifest,
                  "Dataset manifest whose label paths are counted");
  sub->add_option("--labels", o->labels_dir, "Directory of label maps");
  sub->add_option("--classes", o->classes, "Class count K")->required();
  sub->add_option("--csv", o->csv, "Also write the CSV to this path");
  sub->add_option("--out", o->out, "Write weights as a rank-1 f32 tensor");
  sub->add_option("--threads", o->threads,
                  "Worker threads (default: SEGFUSE_THREADS or all cores)");
  sub->callback([o] { run_class_weights(*o); });
}

void register_loss_check(CLI::App& app) {
  auto o = std::make_shared<LossCheckOpts>();
  CLI::App* sub = app.add_subcommand(
      "loss-check",
      "Evaluate a loss and verify its gradient against finite differences");
  sub->add_option("--loss", o->loss,
                  "weighted-ce, pixel-distribution, or confusion-focal")
      ->required();
  sub->add_option("--logits", o->logits, "KxHxW f32 logits tensor")
      ->required();
  sub->add_option("--gt", o->gt, "HxW ground-truth label map")->required();
  sub->add_option("--weights", o->weights, "Rank-1 f32 class-weight tensor");
  sub->add_option("--confusion", o->confusion,
                  "KxK confusion-count tensor (u8 or integral f32)");
  sub->add_option("--eps", o->eps, "Finite-difference step (default 1e-3)");
  sub->callback([o] { run_loss_check(*o); });
}

void register_augment(CLI::App& app) {
  auto o = std::make_shared<AugmentOpts>();
  CLI::App* sub = app.add_subcommand(
      "augment", "Run the deterministic augmentation pipeline over a manifest");
  sub->add_option("--manifest", o->manifest, "Input dataset manifest")
      ->required();
  sub->add_option("--out", o->out_dir, "Output directory for tensors")
      ->required();
  sub->add_option("--seed", o->seed, "Pipeline seed (default 0)");
  sub->add_option("--crop-h", o->crop_h, "Crop height (default 480)");
  sub->add_option("--crop-w", o->crop_w, "Crop width (default 853)");
  sub->add_flag("--dump-draws", o->dump_draws,
                "Print every random draw per record for audit");
  sub->add_option("--threads", o->threads,
                  "Worker threads (default: SEGFUSE_THREADS or all cores)");
  sub->callback([o] { run_augment(*o); });
}

void register_fuse_tta(CLI::App& app) {
  auto o = std::make_shared<FuseTtaOpts>();
  CLI::App* sub = app.add_subcommand(
      "fuse-tta",
      "Fuse augmented-inference probability volumes back to one prediction");
  sub->add_option("variants", o->specs,
                  "Variant specs `path@scale[@flip]` (scale defaults to 1.0)")
      ->required()
      ->expected(-1);
  sub->add_option("-o,--out", o->out, "Output .segt path")->required();
  sub->add_option("--base-height", o->base_height,
                  "Target height (default: the scale-1.0 variant's)");
  sub->add_option("--base-width", o->base_width,
                  "Target width (default: the scale-1.0 variant's)");
  sub->add_option("--confidence-out", o->confidence_out,
                  "Write the per-pixel max probability as an HxW f32 tensor");
  sub->callback([o] { run_fuse_tta(*o); });
}

void register_aggregate(CLI::App& app) {
  auto o = std::make_shared<AggregateOpts>();
  CLI::App* sub = app.add_subcommand(
      "aggregate", "Blend two probability volumes: gamma*A + (1-gamma)*B");
  sub->add_option("a", o->input_a, "Volume A (.segt)")->required();
  sub->add_option("b", o->input_b, "Volume B (.segt)")->required();
  sub->add_option("--gamma", o->gamma, "Blend weight on A, in [0, 1]")
      ->required();
  sub->add_option("-o,--out", o->out, "Output .segt path")->required();
  sub->callback([o] { run_aggregate(*o); });
}

void register_gamma_search(CLI::App& app) {
  auto o = std::make_shared<GammaSearchOpts>();
  CLI::App* sub = app.add_subcommand(
      "gamma-search",
      "Sweep the blend weight over a grid and score each against ground truth");
  sub->add_option("--gt", o->gt, "Ground-truth label file or directory")
      ->required();
  sub->add_option("--pred-a", o->pred_a, "Volume A file or directory")
      ->required();
  sub->add_option("--pred-b", o->pred_b, "Volume B file or directory")
      ->required();
  sub->add_option("--step", o->step, "Grid step in (0, 0.5] (default 0.01)");
  sub->add_option("--threads", o->threads,
                  "Worker threads (default: SEGFUSE_THREADS or all cores)");
  sub->callback([o] { run_gamma_search(*o); });
}

void register_avg_weights(CLI::App& app) {
  auto o = std::make_shared<AvgWeightsOpts>();
  CLI::App* sub = app.add_subcommand(
      "avg-weights", "Average checkpoint parameter sets elementwise");
  sub->add_option("inputs", o->inputs, "Input .params files")
      ->required()
      ->expected(-1);
  sub->add_option("-o,--out", o->out, "Output .params path")->required();
  sub->callback([o] { run_avg_weights(*o); });
}

void register_remap(CLI::App& app) {
  auto o = std::make_shared<RemapOpts>();
  CLI::App* sub = app.add_subcommand(
      "remap", "Rewrite label maps through a class-id mapping table");
  sub->add_option("--manifest", o->manifest, "Input dataset manifest")
      ->required();
  sub->add_option("--map", o->map, "CSV mapping `source_id,target_id`")
      ->required();
  sub->add_option("--out-dir", o->out_dir, "Directory for remapped labels")
      ->required();
  sub->add_option("--manifest-out", o->manifest_out,
                  "Write the updated manifest here (default: stdout)");
  sub->add_option("--report", o->report, "Write a coverage CSV to this path");
  sub->add_option("--threads", o->threads,
                  "Worker threads (default: SEGFUSE_THREADS or all cores)");
  sub->callback([o] { run_remap(*o); });
}

void register_filter(CLI::App& app) {
  auto o = std::make_shared<FilterOpts>();
  CLI::App* sub = app.add_subcommand(
      "filter", "Partition a manifest by annotated coverage after remapping");
  sub->add_option("--manifest", o->manifest, "Input dataset manifest")
      ->required();
  sub->add_option("--map", o->map,
                  "CSV mapping applied before measuring coverage "
                  "(default: identity)");
  sub->add_option("--threshold", o->threshold,
                  "Minimum coverage to keep a record (default 0.8)");
  sub->add_option("--kept-out", o->kept_out,
                  "Write the kept manifest here (default: stdout)");
  sub->add_option("--dropped-out", o->dropped_out,
                  "Write the dropped manifest here");
  sub->add_option("--report", o->report,
                  "Write a status/coverage CSV to this path");
  sub->add_option("--threads", o->threads,
                  "Worker threads (default: SEGFUSE_THREADS or all cores)");
  sub->callback([o] { run_filter(*o); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segfuse: segmentation pipeline toolkit"};
  app.require_subcommand(1);

  register_eval(app);
  register_class_weights(app);
  register_loss_check(app);
  register_augment(app);
  register_fuse_tta(app);
  register_aggregate(app);
  register_gamma_search(app);
  register_avg_weights(app);
  register_remap(app);
  register_filter(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help goes to stdout, exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const segfuse::Error& e) {
    std::cerr << e.what() << "\n";
    return e.is_io() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
