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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "segfuse/core.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/params.hpp"
#include "temp_dir.hpp"

using namespace segfuse;

namespace {

// Per-pixel normalized random volume; `boost` forces that channel to be
// the strict per-pixel argmax.
SoftPrediction random_probs(std::mt19937& rng, int k, int h, int w,
                            int boost = -1) {
  std::uniform_real_distribution<float> u(0.01f, 1.0f);
  SoftPrediction p = ChannelVolume::make(k, h, w);
  const std::size_t plane = p.plane_size();
  for (std::size_t px = 0; px < plane; ++px) {
    float sum = 0.0f, top = 0.0f;
    for (int c = 0; c < k; ++c) {
      const float v = u(rng);
      p.data[c * plane + px] = v;
      top = std::max(top, v);
    }
    if (boost >= 0) p.data[boost * plane + px] = top + 0.5f;
    for (int c = 0; c < k; ++c) sum += p.data[c * plane + px];
    for (int c = 0; c < k; ++c) p.data[c * plane + px] /= sum;
  }
  return p;
}

SoftPrediction dyadic_probs() {
  SoftPrediction p = ChannelVolume::make(3, 2, 2);
  const float plane0[] = {0.5f, 0.25f, 0.125f, 0.75f};
  const float plane1[] = {0.25f, 0.5f, 0.375f, 0.125f};
  const float plane2[] = {0.25f, 0.25f, 0.5f, 0.125f};
  std::copy(plane0, plane0 + 4, p.data.begin());
  std::copy(plane1, plane1 + 4, p.data.begin() + 4);
  std::copy(plane2, plane2 + 4, p.data.begin() + 8);
  return p;
}

ParameterSet small_set(std::initializer_list<float> a,
                       std::initializer_list<float> b) {
  ParameterSet ps;
  ps.entries.push_back({"conv.weight", TensorFile::from_f32({2, 2}, std::vector<float>(a))});
  ps.entries.push_back({"bn.bias", TensorFile::from_f32({3}, std::vector<float>(b))});
  return ps;
}

ParameterSet random_set(std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  std::vector<float> w(12), b(5);
  for (auto& v : w) v = u(rng);
  for (auto& v : b) v = u(rng);
  ParameterSet ps;
  ps.entries.push_back({"conv.weight", TensorFile::from_f32({3, 4}, w)});
  ps.entries.push_back({"bn.bias", TensorFile::from_f32({5}, b)});
  return ps;
}

}  // namespace

TEST_CASE("variant enumeration is scale-major with flips interleaved") {
  const std::vector<TtaVariant> v = enumerate_variants(TtaSpec{});
  REQUIRE(v.size() == 6);
  REQUIRE(v[0].scale == 0.5);
  REQUIRE_FALSE(v[0].flipped);
  REQUIRE(v[1].scale == 0.5);
  REQUIRE(v[1].flipped);
  REQUIRE(v[4].scale == 1.5);
  REQUIRE_FALSE(v[4].flipped);

  const std::vector<TtaVariant> noflip =
      enumerate_variants(TtaSpec{{1.0, 2.0}, false});
  REQUIRE(noflip.size() == 2);

  REQUIRE_THROWS_AS(enumerate_variants(TtaSpec{{}, true}), Error);
  REQUIRE_THROWS_AS(enumerate_variants(TtaSpec{{1.0, 0.0}, true}), Error);
}

TEST_CASE("fusing a single untransformed prediction is the identity") {
  const SoftPrediction p = dyadic_probs();
  const SoftPrediction fused = fuse_tta({{p, 1.0, false}}, 2, 2);
  REQUIRE(fused.data == p.data);
}

TEST_CASE("a flipped duplicate cancels out") {
  const SoftPrediction p = dyadic_probs();
  SoftPrediction flipped = ChannelVolume::make(3, 2, 2);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        flipped.data[c * 4 + y * 2 + x] = p.data[c * 4 + y * 2 + (1 - x)];
  const SoftPrediction fused =
      fuse_tta({{p, 1.0, false}, {flipped, 1.0, true}}, 2, 2);
  REQUIRE(fused.data == p.data);
}

TEST_CASE("constant predictions fuse to the same constants across scales") {
  const int base_h = 10, base_w = 14;
  const float constants[3] = {0.2f, 0.3f, 0.5f};
  std::vector<TtaPrediction> preds;
  for (double s : {0.5, 1.0, 1.5}) {
    const int h = static_cast<int>(base_h * s);
    const int w = static_cast<int>(base_w * s);
    SoftPrediction p = ChannelVolume::make(3, h, w);
    for (int c = 0; c < 3; ++c)
      std::fill(p.data.begin() + c * p.plane_size(),
                p.data.begin() + (c + 1) * p.plane_size(), constants[c]);
    preds.push_back({std::move(p), s, false});
  }
  const SoftPrediction fused = fuse_tta(preds, base_h, base_w);
  for (int c = 0; c < 3; ++c) {
    const float corner = fused.data[c * fused.plane_size()];
    REQUIRE(corner == Catch::Approx(constants[c]).margin(1e-6));
    for (std::size_t px = 0; px < fused.plane_size(); ++px)
      REQUIRE(fused.data[c * fused.plane_size() + px] == corner);
  }
}

TEST_CASE("fusion does not depend on the order of its inputs") {
  std::mt19937 rng(211);
  std::vector<TtaPrediction> preds;
  preds.push_back({random_probs(rng, 3, 8, 12), 1.0, false});
  preds.push_back({random_probs(rng, 3, 4, 6), 0.5, true});
  preds.push_back({random_probs(rng, 3, 12, 18), 1.5, false});
  preds.push_back({random_probs(rng, 3, 8, 12), 1.0, true});

  const SoftPrediction base = fuse_tta(preds, 8, 12);
  std::vector<TtaPrediction> shuffled = {preds[2], preds[0], preds[3],
                                         preds[1]};
  REQUIRE(fuse_tta(shuffled, 8, 12).data == base.data);
  std::vector<TtaPrediction> reversed = {preds[3], preds[2], preds[1],
                                         preds[0]};
  REQUIRE(fuse_tta(reversed, 8, 12).data == base.data);
}

TEST_CASE("a pixel with no mass fuses to the uniform distribution") {
  SoftPrediction p = ChannelVolume::make(4, 1, 2);
  for (int c = 0; c < 4; ++c) p.data[c * 2 + 1] = 0.25f;
  const SoftPrediction fused = fuse_tta({{p, 1.0, false}}, 1, 2);
  for (int c = 0; c < 4; ++c) {
    REQUIRE(fused.data[c * 2 + 0] == 0.25f);
    REQUIRE(fused.data[c * 2 + 1] == 0.25f);
  }
}

TEST_CASE("fusion validates its inputs") {
  try {
    fuse_tta({}, 4, 4);
    FAIL("expected EmptyList");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::empty_list);
  }
  std::mt19937 rng(223);
  try {
    fuse_tta({{random_probs(rng, 3, 4, 4), 1.0, false},
              {random_probs(rng, 2, 4, 4), 1.0, false}},
             4, 4);
    FAIL("expected ClassCountMismatch");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::class_count_mismatch);
  }
}

TEST_CASE("gamma endpoints return the inputs bit-exactly") {
  std::mt19937 rng(227);
  const SoftPrediction ps = random_probs(rng, 3, 6, 7);
  const SoftPrediction pv = random_probs(rng, 3, 6, 7);
  REQUIRE(aggregate(ps, pv, {1.0}).data == ps.data);
  REQUIRE(aggregate(ps, pv, {0.0}).data == pv.data);
}

TEST_CASE("the midpoint aggregation of the worked pixel is exact") {
  SoftPrediction ps = ChannelVolume::make(2, 1, 1);
  SoftPrediction pv = ChannelVolume::make(2, 1, 1);
  ps.data = {0.6f, 0.4f};
  pv.data = {0.2f, 0.8f};
  const SoftPrediction out = aggregate(ps, pv, {0.5});
  REQUIRE(out.data[0] == 0.4f);
  REQUIRE(out.data[1] == 0.6f);
}

TEST_CASE("aggregating a prediction with itself is the identity at any gamma") {
  std::mt19937 rng(229);
  const SoftPrediction p = random_probs(rng, 4, 5, 5);
  for (double g : gamma_grid(0.1)) {
    REQUIRE(aggregate(p, p, {g}).data == p.data);
  }
}

TEST_CASE("aggregation preserves the probability simplex") {
  std::mt19937 rng(233);
  const SoftPrediction ps = random_probs(rng, 5, 4, 4);
  const SoftPrediction pv = random_probs(rng, 5, 4, 4);
  const SoftPrediction out = aggregate(ps, pv, {0.37});
  const std::size_t plane = out.plane_size();
  for (std::size_t px = 0; px < plane; ++px) {
    double sum = 0.0;
    for (int c = 0; c < 5; ++c) {
      const float v = out.data[c * plane + px];
      REQUIRE(v >= 0.0f);
      sum += v;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("a shared argmax survives aggregation at every gamma") {
  std::mt19937 rng(239);
  for (int t = 0; t < 4; ++t) {
    const SoftPrediction ps = random_probs(rng, 4, 5, 50, t);
    const SoftPrediction pv = random_probs(rng, 4, 5, 50, t);
    for (double g : gamma_grid(0.1)) {
      const LabelMap lbl = argmax_labels(aggregate(ps, pv, {g}));
      for (std::uint8_t v : lbl.data) REQUIRE(int(v) == t);
    }
  }
}

TEST_CASE("aggregation validates shapes and gamma") {
  std::mt19937 rng(241);
  const SoftPrediction a = random_probs(rng, 3, 4, 4);
  const SoftPrediction b = random_probs(rng, 3, 4, 5);
  REQUIRE_THROWS_AS(aggregate(a, b, {0.5}), Error);
  const SoftPrediction c = random_probs(rng, 3, 4, 4);
  REQUIRE_THROWS_AS(aggregate(a, c, {1.5}), Error);
  REQUIRE_THROWS_AS(aggregate(a, c, {-0.1}), Error);
}

TEST_CASE("the gamma grid covers [0, 1] and ends exactly at one") {
  const std::vector<double> fine = gamma_grid(0.01);
  REQUIRE(fine.size() == 101);
  REQUIRE(fine.front() == 0.0);
  REQUIRE(fine.back() == 1.0);
  REQUIRE(std::abs(fine[56] - 0.56) < 1e-15);

  const std::vector<double> coarse = gamma_grid(0.5);
  REQUIRE(coarse == std::vector<double>{0.0, 0.5, 1.0});
  REQUIRE(gamma_grid(0.25).size() == 5);

  REQUIRE_THROWS_AS(gamma_grid(0.0), Error);
  REQUIRE_THROWS_AS(gamma_grid(0.6), Error);
  REQUIRE_THROWS_AS(gamma_grid(-0.1), Error);
}

TEST_CASE("identical model pairs tie every gamma and return zero") {
  std::mt19937 rng(251);
  std::vector<SoftPrediction> ps, pv;
  std::vector<LabelMap> gts;
  for (int f = 0; f < 3; ++f) {
    ps.push_back(random_probs(rng, 3, 6, 6));
    pv.push_back(ps.back());
    LabelMap gt = LabelMap::make(6, 6);
    for (auto& v : gt.data) v = static_cast<std::uint8_t>(rng() % 3);
    gts.push_back(std::move(gt));
  }
  const GammaSearchResult r = gamma_search(ps, pv, gts, 0.1);
  REQUIRE(r.gamma == 0.0);
  for (const GammaScore& s : r.curve) REQUIRE(s.miou == r.miou);
}

TEST_CASE("a designed crossover puts the best gamma at one half") {
  // P_s is always right, P_v always wrong; the blend flips at 0.5 and the
  // lowest-index argmax awards the tie at exactly 0.5 to the truth.
  SoftPrediction ps = ChannelVolume::make(2, 4, 4);
  SoftPrediction pv = ChannelVolume::make(2, 4, 4);
  for (std::size_t px = 0; px < 16; ++px) {
    ps.data[px] = 0.9f;
    ps.data[16 + px] = 0.1f;
    pv.data[px] = 0.1f;
    pv.data[16 + px] = 0.9f;
  }
  const LabelMap gt = LabelMap::make(4, 4, 0);
  const GammaSearchResult r = gamma_search({ps}, {pv}, {gt}, 0.01);
  REQUIRE(r.gamma == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(r.miou == 1.0);
  REQUIRE(r.curve.size() == 101);
  for (std::size_t i = 1; i < r.curve.size(); ++i)
    REQUIRE(r.curve[i].miou >= r.curve[i - 1].miou);
  REQUIRE(r.miou >= r.curve.front().miou);
  REQUIRE(r.miou >= r.curve.back().miou);
}

TEST_CASE("gamma search is independent of the thread count") {
  std::mt19937 rng(257);
  std::vector<SoftPrediction> ps, pv;
  std::vector<LabelMap> gts;
  for (int f = 0; f < 6; ++f) {
    ps.push_back(random_probs(rng, 3, 8, 8));
    pv.push_back(random_probs(rng, 3, 8, 8));
    LabelMap gt = LabelMap::make(8, 8);
    for (auto& v : gt.data)
      v = rng() % 5 == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(rng() % 3);
    gts.push_back(std::move(gt));
  }
  const GammaSearchResult base = gamma_search(ps, pv, gts, 0.05, 1);
  for (int threads : {2, 8}) {
    const GammaSearchResult r = gamma_search(ps, pv, gts, 0.05, threads);
    REQUIRE(r.gamma == base.gamma);
    REQUIRE(r.miou == base.miou);
    for (std::size_t i = 0; i < r.curve.size(); ++i)
      REQUIRE(r.curve[i].miou == base.curve[i].miou);
  }
}

TEST_CASE("gamma search validates its frame lists") {
  std::mt19937 rng(263);
  try {
    gamma_search({}, {}, {}, 0.1);
    FAIL("expected EmptyDataset");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::empty_dataset);
  }
  std::vector<SoftPrediction> one{random_probs(rng, 2, 4, 4)};
  REQUIRE_THROWS_AS(gamma_search(one, {}, {LabelMap::make(4, 4)}, 0.1), Error);

  std::vector<SoftPrediction> two{random_probs(rng, 2, 4, 4)};
  LabelMap bad = LabelMap::make(4, 4, 7);
  try {
    gamma_search(one, two, {bad}, 0.1);
    FAIL("expected ClassOutOfRange");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::class_out_of_range);
  }
}

TEST_CASE("the confidence map is the per-pixel maximum") {
  SoftPrediction onehot = ChannelVolume::make(3, 1, 2);
  onehot.data = {1.0f, 0.0f, 0.0f, 1.0f, 0.0f, 0.0f};
  for (float v : score_threshold_report(onehot).data) REQUIRE(v == 1.0f);

  SoftPrediction uniform = ChannelVolume::make(4, 2, 2, 0.25f);
  for (float v : score_threshold_report(uniform).data) REQUIRE(v == 0.25f);

  std::mt19937 rng(269);
  const SoftPrediction p = random_probs(rng, 5, 6, 6);
  const FloatMap m = score_threshold_report(p);
  const std::size_t plane = p.plane_size();
  for (std::size_t px = 0; px < plane; ++px) {
    float want = 0.0f;
    for (int c = 0; c < 5; ++c)
      want = std::max(want, p.data[c * plane + px]);
    REQUIRE(m.data[px] == want);
  }
}

TEST_CASE("parameter sets survive a container round trip") {
  const ParameterSet ps = small_set({1.0f, -2.5f, 3.25f, 0.0f}, {9, 8, 7});
  const std::vector<std::uint8_t> bytes = serialize_parameter_set(ps);
  const ParameterSet back = parse_parameter_set(bytes.data(), bytes.size(),
                                                "roundtrip");
  REQUIRE(back.entries.size() == 2);
  REQUIRE(back.entries[0].name == "conv.weight");
  REQUIRE(back.entries[0].tensor == ps.entries[0].tensor);
  REQUIRE(back.entries[1].name == "bn.bias");
  REQUIRE(back.entries[1].tensor == ps.entries[1].tensor);

  segfuse_test::TempDir tmp("fusion");
  const auto path = tmp.path() / "weights.params";
  write_parameter_set(ps, path);
  const ParameterSet loaded = read_parameter_set(path);
  REQUIRE(loaded.entries[1].tensor == ps.entries[1].tensor);
}

TEST_CASE("the container layout matches the documented bytes") {
  ParameterSet ps;
  ps.entries.push_back({"w", TensorFile::from_f32({2}, std::vector<float>{1.0f, 2.0f})});
  const std::vector<std::uint8_t> bytes = serialize_parameter_set(ps);
  // count=1 | name len=1 | 'w' | SEGT v1 f32 rank1 dims[2] | 8 payload bytes
  REQUIRE(bytes.size() == 4 + 2 + 1 + 11 + 8);
  REQUIRE(bytes[0] == 1);
  REQUIRE(bytes[4] == 1);
  REQUIRE(bytes[5] == 0);
  REQUIRE(bytes[6] == 'w');
  REQUIRE(bytes[7] == 'S');
  REQUIRE(bytes[10] == 'T');
  REQUIRE(bytes[11] == 1);  // format version
  REQUIRE(bytes[12] == 1);  // dtype f32
  REQUIRE(bytes[13] == 1);  // rank
  REQUIRE(bytes[14] == 2);  // dim 0
}

TEST_CASE("averaging parameters matches hand arithmetic") {
  const ParameterSet a = small_set({0.0f, 2.0f, 4.0f, -6.0f}, {1, 1, 1});
  const ParameterSet b = small_set({2.0f, 4.0f, 0.0f, -2.0f}, {3, 5, 7});
  const ParameterSet avg = average_parameters({a, b});
  REQUIRE(avg.entries[0].tensor.to_f32() ==
          std::vector<float>{1.0f, 3.0f, 2.0f, -4.0f});
  REQUIRE(avg.entries[1].tensor.to_f32() == std::vector<float>{2.0f, 3.0f, 4.0f});
}

TEST_CASE("averaging copies of one set returns that set") {
  std::mt19937 rng(271);
  const ParameterSet s = random_set(rng);
  const ParameterSet avg = average_parameters({s, s, s});
  REQUIRE(avg.entries[0].tensor == s.entries[0].tensor);
  REQUIRE(avg.entries[1].tensor == s.entries[1].tensor);
}

TEST_CASE("averaging is invariant under reordering the checkpoint list") {
  std::mt19937 rng(277);
  std::vector<ParameterSet> sets;
  for (int i = 0; i < 4; ++i) sets.push_back(random_set(rng));
  const ParameterSet a = average_parameters(sets);
  const ParameterSet b =
      average_parameters({sets[3], sets[1], sets[0], sets[2]});
  REQUIRE(a.entries[0].tensor == b.entries[0].tensor);
  REQUIRE(a.entries[1].tensor == b.entries[1].tensor);
}

TEST_CASE("parameter averaging validates its inputs") {
  std::mt19937 rng(281);
  try {
    average_parameters({});
    FAIL("expected EmptyList");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::empty_list);
  }

  ParameterSet renamed = random_set(rng);
  renamed.entries[1].name = "bn.weight";
  try {
    average_parameters({random_set(rng), renamed});
    FAIL("expected NameMismatch");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::name_mismatch);
  }

  ParameterSet reshaped = random_set(rng);
  reshaped.entries[0].tensor = TensorFile::from_f32({4, 3}, std::vector<float>(12, 0.0f));
  try {
    average_parameters({random_set(rng), reshaped});
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::shape_mismatch);
  }

  ParameterSet poisoned = random_set(rng);
  std::vector<float> vals = poisoned.entries[0].tensor.to_f32();
  vals[3] = std::numeric_limits<float>::quiet_NaN();
  poisoned.entries[0].tensor = TensorFile::from_f32({3, 4}, vals);
  try {
    average_parameters({poisoned});
    FAIL("expected NonFiniteInput");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::non_finite_input);
  }

  ParameterSet bytes_set;
  bytes_set.entries.push_back({"mask", TensorFile::from_u8({2}, {1, 2})});
  REQUIRE_THROWS_AS(average_parameters({bytes_set}), Error);
}

TEST_CASE("malformed containers are rejected with precise errors") {
  ParameterSet ps;
  ps.entries.push_back({"w", TensorFile::from_f32({2}, std::vector<float>{1.0f, 2.0f})});
  ps.entries.push_back({"w", TensorFile::from_f32({2}, std::vector<float>{3.0f, 4.0f})});
  const std::vector<std::uint8_t> dup = serialize_parameter_set(ps);
  try {
    parse_parameter_set(dup.data(), dup.size(), "dup");
    FAIL("expected NameMismatch for duplicate names");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::name_mismatch);
  }

  ParameterSet ok;
  ok.entries.push_back({"w", TensorFile::from_f32({2}, std::vector<float>{1.0f, 2.0f})});
  std::vector<std::uint8_t> bytes = serialize_parameter_set(ok);
  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 3);
  try {
    parse_parameter_set(truncated.data(), truncated.size(), "cut");
    FAIL("expected TruncatedPayload");
  } catch (const Error& e) {
    REQUIRE(e.code() == errc::truncated_payload);
  }

  bytes.push_back(0);  // trailing garbage
  REQUIRE_THROWS_AS(parse_parameter_set(bytes.data(), bytes.size(), "extra"),
                    Error);
}
