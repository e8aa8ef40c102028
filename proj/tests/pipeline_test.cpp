// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "fitv2/pipeline.hpp"

namespace fitv2 {
namespace {

namespace fs = std::filesystem;

ImageSample ramp_sample(int C, int H, int W, int label = 0) {
  ImageSample s;
  s.image = Image(C, H, W);
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) s.image.at(c, h, w) = static_cast<float>(100 * c + 3 * h + w);
  s.label = label;
  s.source_h = H;
  s.source_w = W;
  return s;
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fitv2_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Resize, SquareSaturatesBudget) {
  auto g = budget_grid(512, 512, 256, 2);
  ASSERT_TRUE(g);
  EXPECT_EQ(*g, (std::pair{16, 16}));
  auto out = resize_to_budget(ramp_sample(1, 512, 512), 256, 2);
  EXPECT_EQ(out->image.height, 32);
  EXPECT_EQ(out->image.width, 32);
}

TEST(Resize, UnderBudgetOnlyRoundsToPatch) {
  auto out = resize_to_budget(ramp_sample(2, 160, 320), 20000, 2);
  ASSERT_TRUE(out);
  EXPECT_EQ(out->image, ramp_sample(2, 160, 320).image);
  EXPECT_EQ(budget_grid(161, 321, 20000, 2), (std::pair{80, 160}));
  // 4.5 patches rounds down, 4.75 rounds up
  EXPECT_EQ(budget_grid(18, 19, 1000, 4), (std::pair{4, 5}));
}

TEST(Resize, RoundHalfDown) {
  EXPECT_EQ(round_half_down(2.5), 2);
  EXPECT_EQ(round_half_down(2.5000001), 3);
  EXPECT_EQ(round_half_down(3.49), 3);
  EXPECT_EQ(round_half_down(3.0), 3);
}

TEST(Resize, SmallerThanPatchIsSkipped) {
  EXPECT_FALSE(budget_grid(1, 100, 64, 2));
  EXPECT_FALSE(resize_to_budget(ramp_sample(1, 100, 3), 64, 4));
  EXPECT_TRUE(budget_grid(2, 100, 64, 2));
}

TEST(Resize, FuzzBudgetDivisibilityAndAspect) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> side(1, 600), budget(1, 1024), patch(1, 8);
  int checked = 0;
  while (checked < 10000) {
    const int H = side(rng), W = side(rng), L = budget(rng), p = patch(rng);
    const auto g = budget_grid(H, W, L, p);
    if (H < p || W < p) {
      ASSERT_FALSE(g);
      continue;
    }
    ASSERT_TRUE(g);
    ++checked;
    const int oh = g->first * p, ow = g->second * p;
    ASSERT_LE(static_cast<long>(g->first) * g->second, L) << H << "x" << W << " L=" << L << " p=" << p;
    ASSERT_GE(oh, p);
    ASSERT_GE(ow, p);
    ASSERT_LE(oh, H + p / 2.0);
    ASSERT_LE(ow, W + p / 2.0);
    // The aspect bound only binds when both output sides span several patches.
    if (g->first >= 2 && g->second >= 2 && static_cast<long>(H) * W <= static_cast<long>(L) * p * p) {
      const double ratio = (static_cast<double>(ow) / oh) / (static_cast<double>(W) / H);
      const double tol = static_cast<double>(p) / std::min(oh, ow);
      ASSERT_GE(ratio, 1.0 - tol - 1e-12) << H << "x" << W << " -> " << oh << "x" << ow;
      ASSERT_LE(ratio, 1.0 + tol + 1e-12) << H << "x" << W << " -> " << oh << "x" << ow;
    }
  }
}

TEST(Resize, FuzzAspectAfterDownscale) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> side(64, 1024);
  for (int trial = 0; trial < 10000; ++trial) {
    const int H = side(rng), W = side(rng);
    const auto g = budget_grid(H, W, 256, 2);
    ASSERT_TRUE(g);
    ASSERT_LE(g->first * g->second, 256);
    if (std::min(g->first, g->second) < 4) continue;
    const double ratio = (static_cast<double>(g->second) / g->first) / (static_cast<double>(W) / H);
    const double tol = 2.0 / std::min(2 * g->first, 2 * g->second);
    EXPECT_NEAR(ratio, 1.0, 2 * tol + 1e-12) << H << "x" << W;
  }
}

TEST(Bilinear, CornersAndLinearFunctions) {
  auto s = ramp_sample(2, 5, 7);
  auto out = resize_bilinear(s.image, 9, 4);
  EXPECT_EQ(out.at(0, 0, 0), s.image.at(0, 0, 0));
  EXPECT_EQ(out.at(1, 8, 3), s.image.at(1, 4, 6));
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 4; ++j) {
      const double y = i * 4.0 / 8, x = j * 6.0 / 3;
      EXPECT_NEAR(out.at(1, i, j), 100 + 3 * y + x, 1e-4);
    }
  EXPECT_EQ(resize_bilinear(s.image, 5, 7), s.image);
}

TEST(CenterCrop, KeepsCentredRows) {
  ImageSample s = ramp_sample(1, 6, 4);
  auto c = center_crop(s.image, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(c.at(0, i, j), s.image.at(0, i + 1, j));
}

TEST(CenterCrop, OddRemainderLeadsAndIdentity) {
  auto s = ramp_sample(1, 7, 4);
  auto c = center_crop(s.image, 4);
  EXPECT_EQ(c.at(0, 0, 0), s.image.at(0, 2, 0));
  EXPECT_EQ(center_crop(ramp_sample(3, 5, 5).image, 5), ramp_sample(3, 5, 5).image);
  EXPECT_THROW(center_crop(s.image, 5), ContractError);
}

TEST(CenterCrop, RampMeanMatches) {
  for (auto [H, W, S] : {std::tuple{20, 30, 10}, {9, 9, 4}, {31, 16, 15}}) {
    Image img(1, H, W);
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) img.at(0, h, w) = static_cast<float>(h + w);
    auto c = center_crop(img, S);
    double full = 0, crop = 0;
    for (float v : img.data) full += v;
    for (float v : c.data) crop += v;
    EXPECT_NEAR(crop / c.data.size(), full / img.data.size(), 1.0) << H << "x" << W;
  }
}

PreprocessPolicy policy(int S = 16) {
  PreprocessPolicy p;
  p.target_size = S;
  p.max_tokens = 64;
  p.patch = 2;
  return p;
}

TEST(Mixed, StrictInequalityAtTarget) {
  std::mt19937_64 rng(3);
  PreprocessCounters n;
  for (int i = 0; i < 100; ++i) {
    auto out = mixed_preprocess(ramp_sample(1, 16, 16), policy(), rng, &n);
    EXPECT_EQ(out->image.height, 16);
  }
  EXPECT_EQ(n.resize_only, 100);
  EXPECT_EQ(n.coin_crop + n.coin_resize, 0);
}

TEST(Mixed, CropBranchGivesTargetSquare) {
  std::mt19937_64 rng(4);
  PreprocessCounters n;
  for (int i = 0; i < 50; ++i) {
    const long before = n.coin_crop;
    auto out = mixed_preprocess(ramp_sample(2, 32, 48), policy(), rng, &n);
    if (n.coin_crop > before) {
      EXPECT_EQ(out->image.height, 16);
      EXPECT_EQ(out->image.width, 16);
    } else {
      EXPECT_LE(out->image.height / 2 * out->image.width / 2, 64);
      EXPECT_NE(out->image.height, out->image.width);
    }
  }
  EXPECT_GT(n.coin_crop, 0);
  EXPECT_GT(n.coin_resize, 0);
}

TEST(Mixed, CropFractionIsHalf) {
  std::mt19937_64 rng(5);
  PreprocessCounters n;
  auto s = ramp_sample(1, 40, 40);
  for (int i = 0; i < 10000; ++i) mixed_preprocess(s, policy(), rng, &n);
  EXPECT_NEAR(n.coin_crop / 1e4, 0.5, 0.02);
  EXPECT_EQ(n.coin_crop + n.coin_resize, 10000);
}

TEST(Mixed, BranchCoverage) {
  std::mt19937_64 rng(6);
  PreprocessCounters n;
  mixed_preprocess(ramp_sample(1, 16, 16), policy(), rng, &n);  // exactly S
  EXPECT_EQ(n.resize_only, 1);
  mixed_preprocess(ramp_sample(1, 40, 12), policy(), rng, &n);  // one side <= S
  EXPECT_EQ(n.resize_only, 2);
  for (int i = 0; i < 20; ++i) mixed_preprocess(ramp_sample(1, 40, 40), policy(), rng, &n);
  EXPECT_EQ(n.resize_only, 2);
  EXPECT_EQ(n.coin_crop + n.coin_resize, 20);
}

TEST(Mixed, FlexibleModeNeverCrops) {
  std::mt19937_64 rng(7);
  auto p = policy();
  p.mode = PreprocessMode::flexible;
  PreprocessCounters n;
  for (int i = 0; i < 100; ++i) mixed_preprocess(ramp_sample(1, 40, 40), p, rng, &n);
  EXPECT_EQ(n.coin_crop, 0);
  EXPECT_EQ(n.resize_only, 100);
}

TEST(Mixed, PolicyValidation) {
  auto p = policy(17);
  EXPECT_THROW(p.validate(), ConfigError);
  p = policy(18);
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_NO_THROW(policy(16).validate());
  EXPECT_EQ(parse_preprocess_mode("flexible"), PreprocessMode::flexible);
  EXPECT_THROW(parse_preprocess_mode("crop"), ConfigError);
}

TEST(Prepare, SkipsDegenerateImagesWithWarning) {
  std::vector<ImageSample> raw{ramp_sample(1, 1, 20), ramp_sample(1, 30, 30)};
  auto prep = prepare_dataset(raw, policy(), 1);
  ASSERT_EQ(prep.samples.size(), 1u);
  ASSERT_EQ(prep.warnings.size(), 1u);
  EXPECT_NE(prep.warnings[0].find("sample 0"), std::string::npos);
  EXPECT_EQ(prep.counters.skipped, 1);
  auto again = prepare_dataset(raw, policy(), 1);
  EXPECT_EQ(again.samples[0].image, prep.samples[0].image);
}

TEST(PackBatch, ValuesPreservedAndPadsZero) {
  std::vector<ImageSample> s{ramp_sample(4, 8, 12), ramp_sample(4, 16, 16), ramp_sample(4, 2, 2)};
  auto b = pack_batch<float>(std::span<const ImageSample>(s), 64, 2, 4);
  EXPECT_EQ(b.lengths, (std::vector<int>{24, 64, 1}));
  const std::size_t D = 16;
  for (std::size_t i = 0; i < 3; ++i) {
    auto tok = patchify(s[i].image, 2);
    for (std::size_t k = 0; k < tok.values.size(); ++k) ASSERT_EQ(b.tokens.data()[i * 64 * D + k], tok.values[k]);
    for (std::size_t k = tok.values.size(); k < 64 * D; ++k) ASSERT_EQ(b.tokens.data()[i * 64 * D + k], 0.0f);
    for (std::size_t l = 0; l < 64; ++l) {
      const float m = (*b.mask)[i * 64 + l];
      if (b.valid(i, l)) {
        EXPECT_EQ(m, 0.0f);
      } else {
        EXPECT_TRUE(std::isinf(m) && m < 0);
      }
    }
  }
  auto back = unpack_tokens(b, b.tokens);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i], patchify(s[i].image, 2).values);
}

TEST(PackBatch, FullItemsHaveNoPads) {
  std::vector<ImageSample> s{ramp_sample(4, 16, 16), ramp_sample(4, 8, 32)};
  auto b = pack_batch<float>(std::span<const ImageSample>(s), 64, 2, 4);
  for (float m : *b.mask) EXPECT_EQ(m, 0.0f);
}

TEST(PackBatch, OversizeAndChannelErrorsNameItem) {
  std::vector<ImageSample> s{ramp_sample(4, 8, 8), ramp_sample(4, 18, 18)};
  try {
    pack_batch<float>(std::span<const ImageSample>(s), 64, 2, 4);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos);
  }
  std::vector<ImageSample> t{ramp_sample(3, 8, 8)};
  EXPECT_THROW(pack_batch<float>(std::span<const ImageSample>(t), 64, 2, 4), DataError);
}

TEST(PositionMap, AgreesWithPatchify) {
  for (auto [h, w] : {std::pair{1, 1}, {2, 3}, {5, 4}}) {
    auto tok = patchify(ramp_sample(1, 2 * h, 2 * w).image, 2);
    EXPECT_EQ(tok.positions, position_map(h, w));
  }
}

TEST(Synth, Deterministic) {
  SynthSpec spec;
  spec.count = 40;
  spec.seed = 9;
  auto a = synth_dataset(spec), b = synth_dataset(spec);
  for (int i = 0; i < 40; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  spec.seed = 10;
  auto c = synth_dataset(spec);
  EXPECT_NE(a[0].image, c[0].image);
  spec.count = 10;
  spec.seed = 9;
  EXPECT_EQ(synth_dataset(spec)[5].image, a[5].image);
}

TEST(Synth, RectangleColourDominatesOwnChannel) {
  SynthSpec spec;
  std::mt19937_64 rng(11);
  for (int label = 0; label < 4; ++label) {
    Rect r;
    auto img = synth_image(spec, label, 16, 16, rng, &r);
    std::vector<double> mean(4, 0.0);
    int n = 0;
    for (int h = 0; h < 16; ++h)
      for (int w = 0; w < 16; ++w) {
        if (!r.contains(h, w)) continue;
        ++n;
        for (int c = 0; c < 4; ++c) mean[c] += img.at(c, h, w);
      }
    for (int c = 0; c < 4; ++c) {
      if (c != label) {
        EXPECT_GT(mean[label] / n, mean[c] / n + 1.0);
      }
    }
  }
}

TEST(Synth, ResolutionHistogramMatchesWeights) {
  SynthSpec spec;
  spec.count = 10000;
  spec.resolutions = {{8, 8, 2.0}, {4, 8, 1.0}, {4, 12, 1.0}};
  auto data = synth_dataset(spec);
  std::map<std::pair<int, int>, int> hist;
  std::map<int, int> labels;
  for (const auto& s : data) {
    ++hist[std::pair{s.image.height, s.image.width}];
    ++labels[s.label];
  }
  EXPECT_NEAR(hist[std::pair(8, 8)] / 1e4, 0.5, 0.02);
  EXPECT_NEAR(hist[std::pair(4, 8)] / 1e4, 0.25, 0.02);
  EXPECT_NEAR(hist[std::pair(4, 12)] / 1e4, 0.25, 0.02);
  for (auto [k, v] : labels) EXPECT_NEAR(v / 1e4, 0.25, 0.02);
}

TEST(Synth, SpecTextRoundTrip) {
  SynthSpec spec;
  spec.seed = 123;
  spec.count = 77;
  spec.texture = 0.125;
  spec.resolutions = {{6, 9, 0.5}, {12, 4, 2.0}};
  EXPECT_EQ(parse_synth_spec(format_synth_spec(spec), "x"), spec);
  EXPECT_THROW(parse_synth_spec("seed = 1\ncolour = red\n", "x"), ConfigError);
  EXPECT_THROW(parse_synth_spec("rect_min = 0.9\nrect_max = 0.1\n", "x"), ConfigError);
  EXPECT_THROW(parse_synth_spec("resolutions = 8by8\n", "x"), ConfigError);
}

TEST(DatasetIo, RoundTripBitwise) {
  SynthSpec spec;
  spec.count = 12;
  auto data = synth_dataset(spec);
  auto dir = scratch_dir("roundtrip");
  save_dataset(dir, data, &spec);
  auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].image, data[i].image);
    EXPECT_EQ(back[i].label, data[i].label);
  }
  EXPECT_EQ(parse_synth_spec(read_text_file((dir / "dataset.spec").string()), "spec"), spec);
  fs::remove_all(dir);
}

TEST(DatasetIo, LittleEndianHeader) {
  auto dir = scratch_dir("header");
  fs::create_directories(dir);
  Image img(2, 1, 3, 1.0f);
  write_sample(dir / "a.sample", img, 5);
  std::ifstream in(dir / "a.sample", std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), {});
  ASSERT_EQ(b.size(), 16u + 24u);
  const std::vector<unsigned char> head{2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, 5, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f};
  EXPECT_EQ(std::vector<unsigned char>(b.begin(), b.begin() + 20), head);
  fs::remove_all(dir);
}

TEST(DatasetIo, ErrorsNameThePath) {
  auto dir = scratch_dir("missing");
  try {
    load_dataset(dir);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(dir.string()), std::string::npos);
  }
  fs::create_directories(dir);
  {
    std::ofstream(dir / "index") << "000000\n";
    std::ofstream(dir / "000000.sample", std::ios::binary) << "short";
  }
  EXPECT_THROW(load_dataset(dir), DataError);
  write_sample(dir / "000000.sample", Image(1, 2, 2), 0);
  {
    std::ofstream app(dir / "000000.sample", std::ios::binary | std::ios::app);
    app << "xxxx";
  }
  EXPECT_THROW(load_dataset(dir), DataError);
  fs::remove_all(dir);
  fs::create_directories(dir);
  EXPECT_THROW(open_dataset(dir), DataError);
  fs::remove_all(dir);
}

TEST(DatasetIo, OpenSynthesizesFromSpec) {
  auto dir = scratch_dir("open");
  fs::create_directories(dir);
  std::ofstream(dir / "dataset.spec") << "seed = 4\ncount = 6\nresolutions = 8x8:1\n";
  auto first = open_dataset(dir);
  ASSERT_EQ(first.size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "index"));
  auto second = open_dataset(dir);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(first[i].image, second[i].image);
  fs::remove_all(dir);
}

TEST(DatasetIo, PpmExport) {
  auto dir = scratch_dir("ppm");
  fs::create_directories(dir);
  Image img(1, 2, 3, 1.0f);
  img.at(0, 1, 2) = -1.0f;
  write_ppm(dir / "x.ppm", img);
  std::ifstream in(dir / "x.ppm", std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), {});
  const std::string head = "P6\n3 2\n255\n";
  ASSERT_EQ(b.size(), head.size() + 18);
  EXPECT_EQ(b[head.size()], 255);
  EXPECT_EQ(b.back(), 0);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fitv2
