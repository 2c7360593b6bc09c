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

#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <random>
#include <vector>

#include "segfuse/class_weights.hpp"
#include "segfuse/core.hpp"
#include "segfuse/metrics.hpp"

using namespace segfuse;

namespace {

LabelMap map_from(std::initializer_list<std::initializer_list<int>> rows) {
  LabelMap lbl = LabelMap::make(static_cast<int>(rows.size()),
                                static_cast<int>(rows.begin()->size()));
  int y = 0;
  for (const auto& row : rows) {
    int x = 0;
    for (int v : row) lbl.at(y, x++) = static_cast<std::uint8_t>(v);
    ++y;
  }
  return lbl;
}

LabelMap random_labels(std::mt19937& rng, int h, int w, int k,
                       double ignore_prob) {
  std::uniform_int_distribution<int> cls(0, k - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  LabelMap lbl = LabelMap::make(h, w);
  for (auto& v : lbl.data)
    v = coin(rng) < ignore_prob ? kIgnoreLabel
                                : static_cast<std::uint8_t>(cls(rng));
  return lbl;
}

// Set-intersection mIoU oracle, independent of the confusion-matrix path.
struct OracleIou {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

OracleIou brute_force_miou(const std::vector<LabelMap>& gts,
                           const std::vector<LabelMap>& preds, int k) {
  OracleIou out;
  out.per_class.resize(k);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t f = 0; f < gts.size(); ++f) {
      for (std::size_t i = 0; i < gts[f].data.size(); ++i) {
        const std::uint8_t g = gts[f].data[i];
        if (g == kIgnoreLabel) continue;
        const std::uint8_t p = preds[f].data[i];
        if (g == c && p == c) ++inter;
        if (g == c || p == c) ++uni;
      }
    }
    if (uni == 0) continue;
    out.per_class[c] = static_cast<double>(inter) / static_cast<double>(uni);
    sum += *out.per_class[c];
    ++present;
  }
  out.mean = sum / present;
  return out;
}

}  // namespace

TEST_CASE("fully ignored ground truth leaves the matrix unchanged") {
  ConfusionMatrix cm(3);
  const LabelMap gt = map_from({{255, 255}, {255, 255}});
  const LabelMap pred = map_from({{0, 1}, {2, 0}});
  cm.accumulate(gt, pred);
  REQUIRE(cm.total() == 0);
}

TEST_CASE("accumulate counts each (gt, pred) pair") {
  ConfusionMatrix cm(2);
  cm.accumulate(map_from({{0, 0}, {1, 1}}), map_from({{0, 1}, {1, 1}}));
  REQUIRE(cm.at(0, 0) == 1);
  REQUIRE(cm.at(0, 1) == 1);
  REQUIRE(cm.at(1, 0) == 0);
  REQUIRE(cm.at(1, 1) == 2);
}

TEST_CASE("accumulation order does not matter") {
  std::mt19937 rng(23);
  const LabelMap gt_a = random_labels(rng, 5, 7, 4, 0.2);
  const LabelMap pr_a = random_labels(rng, 5, 7, 4, 0.0);
  const LabelMap gt_b = random_labels(rng, 5, 7, 4, 0.2);
  const LabelMap pr_b = random_labels(rng, 5, 7, 4, 0.0);

  ConfusionMatrix ab(4), ba(4);
  ab.accumulate(gt_a, pr_a);
  ab.accumulate(gt_b, pr_b);
  ba.accumulate(gt_b, pr_b);
  ba.accumulate(gt_a, pr_a);
  REQUIRE(ab.counts() == ba.counts());
}

TEST_CASE("merge is a commutative monoid with the zero matrix as identity") {
  std::mt19937 rng(29);
  std::uniform_int_distribution<std::uint64_t> val(0, 1000);
  auto random_cm = [&] {
    ConfusionMatrix cm(3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) cm.at(i, j) = val(rng);
    return cm;
  };
  const ConfusionMatrix a = random_cm(), b = random_cm(), c = random_cm();

  ConfusionMatrix with_zero = a;
  with_zero.merge(ConfusionMatrix(3));
  REQUIRE(with_zero.counts() == a.counts());

  ConfusionMatrix ab_c = a;
  ab_c.merge(b);
  ab_c.merge(c);
  ConfusionMatrix bc = b;
  bc.merge(c);
  ConfusionMatrix a_bc = a;
  a_bc.merge(bc);
  REQUIRE(ab_c.counts() == a_bc.counts());

  ConfusionMatrix ba = b;
  ba.merge(a);
  ConfusionMatrix ab = a;
  ab.merge(b);
  REQUIRE(ab.counts() == ba.counts());
}

TEST_CASE("merging per-frame matrices equals serial accumulation") {
  std::mt19937 rng(31);
  std::vector<LabelMap> gts, preds;
  for (int f = 0; f < 10; ++f) {
    gts.push_back(random_labels(rng, 6, 6, 5, 0.25));
    preds.push_back(random_labels(rng, 6, 6, 5, 0.0));
  }

  ConfusionMatrix serial(5);
  for (int f = 0; f < 10; ++f) serial.accumulate(gts[f], preds[f]);

  ConfusionMatrix merged(5);
  for (int f = 0; f < 10; ++f) {
    ConfusionMatrix frame(5);
    frame.accumulate(gts[f], preds[f]);
    merged.merge(frame);
  }
  REQUIRE(merged.counts() == serial.counts());
}

TEST_CASE("accumulate validates shapes and class ranges") {
  ConfusionMatrix cm(2);
  REQUIRE_THROWS_AS(
      cm.accumulate(map_from({{0, 0}}), map_from({{0}, {0}})), Error);
  try {
    cm.accumulate(map_from({{3}}), map_from({{0}}));
    FAIL("expected ClassOutOfRange");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::class_out_of_range);
  }
  // 255 in the prediction is out of range, not an ignore marker.
  REQUIRE_THROWS_AS(cm.accumulate(map_from({{0}}), map_from({{255}})), Error);
}

TEST_CASE("diagonal matrix scores a perfect mIoU") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 5;
  cm.at(1, 1) = 9;
  cm.at(2, 2) = 1;
  const IouReport r = miou(cm);
  REQUIRE(r.present_classes == 3);
  for (int i = 0; i < 3; ++i) REQUIRE(*r.per_class[i] == 1.0);
  REQUIRE(r.mean_iou == 1.0);
}

TEST_CASE("mIoU of the 2x2 worked example") {
  ConfusionMatrix cm(2);
  cm.accumulate(map_from({{0, 0}, {1, 1}}), map_from({{0, 1}, {1, 1}}));
  const IouReport r = miou(cm);
  REQUIRE(*r.per_class[0] == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(*r.per_class[1] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
  REQUIRE(r.mean_iou == Catch::Approx(7.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("classes with zero union are excluded from the mean") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 4;
  cm.at(1, 1) = 2;
  cm.at(1, 0) = 2;  // class 2 never appears
  const IouReport r = miou(cm);
  REQUIRE_FALSE(r.per_class[2].has_value());
  REQUIRE(r.present_classes == 2);
  const double iou0 = 4.0 / 6.0, iou1 = 2.0 / 4.0;
  REQUIRE(r.mean_iou == Catch::Approx((iou0 + iou1) / 2).epsilon(1e-12));
}

TEST_CASE("an all-zero matrix has no evaluable pixels") {
  ConfusionMatrix cm(4);
  try {
    miou(cm);
    FAIL("expected EmptyMatrix");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::empty_matrix);
  }
}

TEST_CASE("per-class IoU is symmetric under matrix transposition") {
  std::mt19937 rng(37);
  std::uniform_int_distribution<std::uint64_t> val(0, 50);
  ConfusionMatrix cm(4), t(4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) cm.at(i, j) = val(rng);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) t.at(j, i) = cm.at(i, j);
  const IouReport a = miou(cm), b = miou(t);
  for (int i = 0; i < 4; ++i) REQUIRE(a.per_class[i] == b.per_class[i]);
}

TEST_CASE("row sums equal per-class ground-truth pixel counts") {
  std::mt19937 rng(41);
  const int k = 5;
  std::vector<LabelMap> gts, preds;
  std::vector<std::uint64_t> expected(k, 0);
  ConfusionMatrix cm(k);
  for (int f = 0; f < 6; ++f) {
    gts.push_back(random_labels(rng, 8, 8, k, 0.3));
    preds.push_back(random_labels(rng, 8, 8, k, 0.0));
    for (std::uint8_t v : gts.back().data)
      if (v != kIgnoreLabel) ++expected[v];
    cm.accumulate(gts.back(), preds.back());
  }
  for (int i = 0; i < k; ++i) REQUIRE(cm.row_sum(i) == expected[i]);
}

TEST_CASE("mIoU matches the set-intersection oracle on random data") {
  std::mt19937 rng(43);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<LabelMap> gts{random_labels(rng, 8, 8, 5, 0.3)};
    std::vector<LabelMap> preds{random_labels(rng, 8, 8, 5, 0.0)};
    ConfusionMatrix cm(5);
    cm.accumulate(gts[0], preds[0]);
    if (cm.total() == 0) continue;
    const IouReport got = miou(cm);
    const OracleIou want = brute_force_miou(gts, preds, 5);
    for (int c = 0; c < 5; ++c) REQUIRE(got.per_class[c] == want.per_class[c]);
    REQUIRE(got.mean_iou == want.mean);
    REQUIRE(got.mean_iou >= 0.0);
    REQUIRE(got.mean_iou <= 1.0);
  }
}

TEST_CASE("coverage counts annotated pixels") {
  REQUIRE(coverage(map_from({{0, 1}, {2, 0}})) == 1.0);

  LabelMap lbl = LabelMap::make(10, 10, 0);
  for (int i = 0; i < 21; ++i) lbl.data[i] = kIgnoreLabel;
  REQUIRE(coverage(lbl) == Catch::Approx(0.79).epsilon(1e-12));

  REQUIRE(coverage(LabelMap::make(0, 0)) == 0.0);
}

TEST_CASE("pixel counting matches a hand count") {
  const LabelMap lbl = map_from({{0, 0}, {1, 255}});
  const PixelCounts n = count_pixels(std::span(&lbl, 1), 2);
  REQUIRE(n.counts == std::vector<std::uint64_t>{2, 1});
}

TEST_CASE("counting an empty sequence yields zeros") {
  const PixelCounts n = count_pixels(std::span<const LabelMap>(), 3);
  REQUIRE(n.counts == std::vector<std::uint64_t>{0, 0, 0});
}

TEST_CASE("pixel counts are additive over concatenation") {
  std::mt19937 rng(47);
  std::vector<LabelMap> a, b, all;
  for (int i = 0; i < 3; ++i) a.push_back(random_labels(rng, 4, 4, 3, 0.2));
  for (int i = 0; i < 2; ++i) b.push_back(random_labels(rng, 4, 4, 3, 0.2));
  all = a;
  all.insert(all.end(), b.begin(), b.end());

  PixelCounts na = count_pixels(a, 3);
  const PixelCounts nb = count_pixels(b, 3);
  na.merge(nb);
  REQUIRE(na.counts == count_pixels(all, 3).counts);
}

TEST_CASE("counting rejects out-of-range labels") {
  const LabelMap lbl = map_from({{5}});
  REQUIRE_THROWS_AS(count_pixels(std::span(&lbl, 1), 3), Error);
}

TEST_CASE("uniform counts give unit weights") {
  const ClassWeights w = compute_weights({{10, 10, 10}});
  for (double v : w.weights) REQUIRE(v == 1.0);
}

TEST_CASE("weights of counts [4, 1] match the closed form") {
  const PixelCounts n{{4, 1}};
  REQUIRE(pixel_count_mean(n) == 2.5);
  const ClassWeights w = compute_weights(n);
  REQUIRE(w.weights[0] == Catch::Approx(1.264911).margin(1e-6));
  REQUIRE(w.weights[1] == Catch::Approx(0.632456).margin(1e-6));
}

TEST_CASE("weights are invariant under scaling every count") {
  const PixelCounts n{{4, 1, 0, 977}};
  const ClassWeights base = compute_weights(n);
  for (std::uint64_t k : {2ull, 7ull, 10ull, 1000ull}) {
    PixelCounts scaled = n;
    for (auto& c : scaled.counts) c *= k;
    const ClassWeights w = compute_weights(scaled);
    REQUIRE(w.weights == base.weights);
  }
}

TEST_CASE("larger pixel counts get strictly larger weights") {
  std::mt19937 rng(53);
  std::uniform_int_distribution<std::uint64_t> val(0, 100000);
  for (int trial = 0; trial < 20; ++trial) {
    PixelCounts n{{val(rng), val(rng), val(rng), val(rng), val(rng)}};
    std::uint64_t total = 0;
    for (auto c : n.counts) total += c;
    if (total == 0) continue;
    const ClassWeights w = compute_weights(n);
    for (std::size_t i = 0; i < n.counts.size(); ++i)
      for (std::size_t j = 0; j < n.counts.size(); ++j)
        if (n.counts[i] > n.counts[j])
          REQUIRE(w.weights[i] > w.weights[j]);
  }
}

TEST_CASE("mean of squared weights is one") {
  const ClassWeights w = compute_weights({{3, 14, 0, 159, 2653}});
  double mean_sq = 0.0;
  for (double v : w.weights) mean_sq += v * v;
  mean_sq /= static_cast<double>(w.weights.size());
  REQUIRE(mean_sq == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("weight is zero exactly for zero-count classes") {
  const ClassWeights w = compute_weights({{0, 5, 0, 1}});
  REQUIRE(w.weights[0] == 0.0);
  REQUIRE(w.weights[2] == 0.0);
  REQUIRE(w.weights[1] > 0.0);
  REQUIRE(w.weights[3] > 0.0);
}

TEST_CASE("all-zero counts are rejected") {
  try {
    compute_weights({{0, 0}});
    FAIL("expected AllZeroCounts");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::all_zero_counts);
  }
}
