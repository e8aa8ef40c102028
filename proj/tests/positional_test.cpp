// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fitv2/positional/rope.hpp"

namespace fitv2 {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

RopeConfig config(int head_dim, RopeMethod m = RopeMethod::none, int train_len = 16) {
  RopeConfig c;
  c.head_dim = head_dim;
  c.method = m;
  c.train_len = train_len;
  return c;
}

TEST(BaseFrequencies, HeadDimEight) {
  auto f = base_frequencies(8, 10000.0);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0], 1.0);
  EXPECT_NEAR(f[1], 0.01, 1e-15);
}

TEST(BaseFrequencies, HeadDimSixteen) {
  auto f = base_frequencies(16, 10000.0);
  const double want[] = {1.0, 1e-1, 1e-2, 1e-3};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(f[i], want[i], 1e-15);
}

TEST(BaseFrequencies, FirstIsOneForAnyBase) {
  for (double b : {2.0, 500.0, 1e4, 1e6}) EXPECT_EQ(base_frequencies(12, b)[0], 1.0);
}

TEST(BaseFrequencies, StrictlyPositiveAndDecreasing) {
  auto f = base_frequencies(64, 10000.0);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_GT(f[i], 0.0);
    if (i) {
      EXPECT_LT(f[i], f[i - 1]);
    }
  }
}

TEST(BaseFrequencies, HeadDimNotMultipleOfFourRejected) {
  EXPECT_THROW(base_frequencies(6, 10000.0), ConfigError);
  EXPECT_THROW(RopeTable::build(config(10), 4, 4), ConfigError);
}

TEST(Rotate1d, ZeroPositionIsIdentity) {
  std::vector<double> x{0.3, -1.2, 2.0, 0.5};
  std::vector<double> f{1.0, 0.1};
  EXPECT_EQ(rotate_1d<double>(x, 0.0, f), x);
}

TEST(Rotate1d, QuarterTurn) {
  std::vector<double> x{1.0, 0.0};
  std::vector<double> f{std::numbers::pi / 2};
  auto y = rotate_1d<double>(x, 1.0, f);
  EXPECT_NEAR(y[0], 0.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
}

TEST(Rotate1d, ScoreDependsOnlyOnRelativePosition) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-50, 50);
  std::vector<double> freqs(16);
  for (std::size_t i = 0; i < 16; ++i) freqs[i] = std::pow(10000.0, -2.0 * i / 32);
  for (int trial = 0; trial < 1000; ++trial) {
    auto q = randn(32, rng), k = randn(32, rng);
    const double m = pos(rng), n = pos(rng), c = pos(rng);
    const double a = dot(rotate_1d<double>(q, m, freqs), rotate_1d<double>(k, n, freqs));
    const double b = dot(rotate_1d<double>(q, m + c, freqs), rotate_1d<double>(k, n + c, freqs));
    ASSERT_NEAR(a, b, 1e-12);
  }
}

TEST(Rotate1d, PreservesNorm) {
  std::mt19937_64 rng(12);
  std::vector<double> freqs(8, 0.37);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = randn(16, rng);
    auto y = rotate_1d<double>(x, trial * 1.7, freqs);
    EXPECT_NEAR(std::sqrt(dot(x, x)), std::sqrt(dot(y, y)), 1e-12);
  }
}

TEST(Rotate2d, OriginIsIdentity) {
  auto table = RopeTable::build(config(16), 8, 8);
  std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
  EXPECT_EQ(table.rotate_2d<double>(x, 0, 0), x);
}

TEST(Rotate2d, ScoreInvariantUnderGridTranslation) {
  auto table = RopeTable::build(config(24), 32, 32);
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> pos(0, 20);
  for (int trial = 0; trial < 1000; ++trial) {
    auto q = randn(24, rng), k = randn(24, rng);
    const int hm = pos(rng), wm = pos(rng), hn = pos(rng), wn = pos(rng);
    const double a = dot(table.rotate_2d<double>(q, hm, wm), table.rotate_2d<double>(k, hn, wn));
    const double b = dot(table.rotate_2d<double>(q, hm + 3, wm + 5), table.rotate_2d<double>(k, hn + 3, wn + 5));
    ASSERT_NEAR(a, b, 1e-12);
  }
}

TEST(Rotate2d, ReducesToRotate1dOnFirstHalf) {
  auto table = RopeTable::build(config(16), 16, 16);
  std::mt19937_64 rng(14);
  auto x = randn(16, rng);
  auto y = table.rotate_2d<double>(x, 7, 0);
  auto first = rotate_1d<double>(std::span<const double>(x).first(8), 7.0, table.freqs_h());
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(y[i], first[i], 1e-15);
  for (int i = 8; i < 16; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Rotate2d, OutOfRangePositionRejected) {
  auto table = RopeTable::build(config(16), 4, 6);
  std::vector<double> x(16, 1.0);
  EXPECT_THROW(table.rotate_2d<double>(x, 4, 0), ShapeError);
  EXPECT_THROW(table.rotate_2d<double>(x, 0, 6), ShapeError);
  EXPECT_NO_THROW(table.rotate_2d<double>(x, 3, 5));
}

TEST(Rotate2d, CosSinOnUnitCircle) {
  auto table = RopeTable::build(config(24, RopeMethod::pi, 8), 10, 14);
  std::vector<float> c(table.pairs()), s(table.pairs());
  for (int h = 0; h < 10; ++h)
    for (int w = 0; w < 14; ++w) {
      table.rotation<float>(h, w, c, s);
      for (std::size_t i = 0; i < c.size(); ++i) ASSERT_NEAR(c[i] * c[i] + s[i] * s[i], 1.0f, 1e-6f);
    }
}

TEST(ScaleFactors, EqualToTrainingIsUnit) {
  auto f = scale_factors(16, 16, 16);
  EXPECT_EQ(f.s, 1.0);
  EXPECT_EQ(f.s_h, 1.0);
  EXPECT_EQ(f.s_w, 1.0);
}

TEST(ScaleFactors, PerAxisAndGlobal) {
  auto f = scale_factors(20, 40, 16);
  EXPECT_DOUBLE_EQ(f.s, 2.5);
  EXPECT_DOUBLE_EQ(f.s_h, 1.25);
  EXPECT_DOUBLE_EQ(f.s_w, 2.5);
}

TEST(ScaleFactors, FloorAtOne) {
  auto f = scale_factors(10, 12, 16);
  EXPECT_EQ(f.s, 1.0);
  EXPECT_EQ(f.s_h, 1.0);
  EXPECT_EQ(f.s_w, 1.0);
}

TEST(PositionInterpolation, Examples) {
  auto p = apply_pi({3.0, 7.0}, 1.0);
  EXPECT_EQ(p.h, 3.0);
  EXPECT_EQ(p.w, 7.0);
  EXPECT_EQ(apply_pi({10.0, 0.0}, 2.0).h, 5.0);
  auto q = apply_pi({10.0, 10.0}, 2.0, 4.0);
  EXPECT_EQ(q.h, 5.0);
  EXPECT_EQ(q.w, 2.5);
}

// For an extent M > L_train the largest index M-1 lands at L_train - L_train/M:
// inside the trained range [0, L_train) but possibly above L_train - 1.
TEST(PositionInterpolation, ScaledCoordinatesStayInsideTrainedRange) {
  const int train = 8;
  for (int h = 1; h <= 40; ++h)
    for (int w = 1; w <= 40; ++w) {
      auto f = scale_factors(h, w, train);
      auto p = apply_pi({double(h - 1), double(w - 1)}, f.s);
      ASSERT_LT(std::max(p.h, p.w), train);
      if (std::max(h, w) <= train) {
        ASSERT_LE(std::max(p.h, p.w), train - 1);
      }
      auto a = apply_pi({double(h - 1), double(w - 1)}, f.s_h, f.s_w);
      ASSERT_LT(std::max(a.h, a.w), train);
    }
}

TEST(Ntk, UnitScaleKeepsBase) { EXPECT_EQ(apply_ntk(config(64), 1.0), 10000.0); }

TEST(Ntk, DoubledContext) {
  // 10000 * 2^(64/62)
  EXPECT_NEAR(apply_ntk(config(64), 2.0), 20452.228712025368, 1e-8);
}

TEST(Ntk, HighestFrequencyUnchanged) {
  for (double s : {1.0, 1.5, 3.0, 10.0}) {
    EXPECT_EQ(base_frequencies(64, apply_ntk(config(64), s))[0], 1.0);
  }
}

TEST(Yarn, RampPiecewise) {
  const double a = 1.0, b = 32.0;
  EXPECT_EQ(yarn_ramp(0.5, a, b), 0.0);
  EXPECT_EQ(yarn_ramp(a, a, b), 0.0);
  EXPECT_EQ(yarn_ramp(b, a, b), 1.0);
  EXPECT_EQ(yarn_ramp(40.0, a, b), 1.0);
  EXPECT_EQ(yarn_ramp(2.0, a, b), 1.0 / 31.0);
  EXPECT_EQ(yarn_ramp(16.5, a, b), 0.5);
  EXPECT_EQ(yarn_ramp(25.0, a, b), 24.0 / 31.0);
}

TEST(Yarn, UnitScaleIsIdentity) {
  auto cfg = config(64);
  auto y = apply_yarn(cfg, 1.0);
  EXPECT_EQ(y.freqs, base_frequencies(64, 10000.0));
  EXPECT_EQ(y.magnitude, 1.0);
}

TEST(Yarn, MagnitudeAtExpTen) { EXPECT_NEAR(apply_yarn(config(64), std::exp(10.0)).magnitude, 2.0, 1e-14); }

TEST(Yarn, AlphaNotBelowBetaRejected) {
  auto cfg = config(64);
  cfg.yarn_alpha = 32;
  cfg.yarn_beta = 32;
  EXPECT_THROW(apply_yarn(cfg, 2.0), ConfigError);
  EXPECT_THROW(apply_vision_yarn(cfg, 2.0, 2.0), ConfigError);
}

TEST(Yarn, BlendedFrequenciesBetweenInterpolatedAndOriginal) {
  auto cfg = config(64, RopeMethod::yarn, 256);  // r(d) spans the ramp
  auto theta = base_frequencies(64, cfg.base);
  for (double s : {1.0, 1.3, 2.0, 7.5}) {
    auto y = apply_yarn(cfg, s);
    for (std::size_t d = 0; d < theta.size(); ++d) {
      EXPECT_LE(theta[d] / s, y.freqs[d] * (1 + 1e-15));
      EXPECT_LE(y.freqs[d], theta[d] * (1 + 1e-15));
    }
  }
}

TEST(VisionNtk, EqualScalesMatchNtk) {
  auto cfg = config(48);
  for (double s : {1.0, 1.25, 2.0, 3.7}) {
    auto [bh, bw] = apply_vision_ntk(cfg, s, s);
    EXPECT_EQ(bh, apply_ntk(cfg, s));
    EXPECT_EQ(bw, apply_ntk(cfg, s));
  }
}

TEST(VisionNtk, PerAxisBases) {
  auto cfg = config(64);
  auto [bh, bw] = apply_vision_ntk(cfg, 1.0, 2.0);
  EXPECT_EQ(bh, 10000.0);
  EXPECT_NEAR(bw, 10000.0 * std::pow(2.0, 64.0 / 62.0), 1e-9);
  auto [ch, cw] = apply_vision_ntk(cfg, 1.0, 1.0);
  EXPECT_EQ(ch, 10000.0);
  EXPECT_EQ(cw, 10000.0);
}

TEST(VisionYarn, EqualScalesMatchYarn) {
  auto cfg = config(64, RopeMethod::vision_yarn, 128);
  for (double s : {1.0, 1.4, 2.0, 5.0}) {
    auto axes = apply_vision_yarn(cfg, s, s);
    auto y = apply_yarn(cfg, s);
    for (std::size_t d = 0; d < y.freqs.size(); ++d) {
      EXPECT_NEAR(axes.h[d], y.freqs[d], 1e-12);
      EXPECT_NEAR(axes.w[d], y.freqs[d], 1e-12);
    }
  }
}

TEST(VisionYarn, UnitHeightScaleLeavesHeightAxis) {
  auto cfg = config(32, RopeMethod::vision_yarn, 64);
  auto axes = apply_vision_yarn(cfg, 1.0, 3.0);
  EXPECT_EQ(axes.h, base_frequencies(32, cfg.base));
}

TEST(VisionYarn, ConvexCombinationBound) {
  auto cfg = config(32, RopeMethod::vision_yarn, 100);
  auto theta = base_frequencies(32, cfg.base);
  auto axes = apply_vision_yarn(cfg, 1.7, 2.9);
  for (std::size_t d = 0; d < theta.size(); ++d) {
    EXPECT_LE(theta[d] / 1.7, axes.h[d] * (1 + 1e-15));
    EXPECT_LE(axes.h[d], theta[d]);
    EXPECT_LE(theta[d] / 2.9, axes.w[d] * (1 + 1e-15));
    EXPECT_LE(axes.w[d], theta[d]);
  }
}

TEST(AttentionScale, Examples) {
  EXPECT_EQ(attention_scale(256, 256, 256, 256), 1.0);
  // sqrt(ln 1.5625) ~ 0.668 is floored.
  EXPECT_EQ(attention_scale(320, 320, 256, 256), 1.0);
  EXPECT_NEAR(attention_scale(512, 512, 256, 256), 1.1774100225154747, 1e-14);
}

TEST(RopeTable, EveryMethodIsIdentityInsideTrainingBudget) {
  const auto reference = RopeTable::build(config(24, RopeMethod::none, 8), 8, 8, false);
  for (auto m : {RopeMethod::pi, RopeMethod::ntk, RopeMethod::yarn, RopeMethod::vision_ntk, RopeMethod::vision_yarn}) {
    for (auto [h, w] : {std::pair{8, 8}, std::pair{4, 8}, std::pair{8, 2}, std::pair{5, 5}}) {
      auto t = RopeTable::build(config(24, m, 8), h, w, true);
      EXPECT_EQ(t.magnitude(), 1.0) << to_string(m);
      EXPECT_EQ(t.attention_scale(), 1.0) << to_string(m);
      for (std::size_t d = 0; d < t.freqs_h().size(); ++d) {
        EXPECT_EQ(t.freqs_h()[d], reference.freqs_h()[d]) << to_string(m);
        EXPECT_EQ(t.freqs_w()[d], reference.freqs_w()[d]) << to_string(m);
      }
      auto p = t.scaled_position(h - 1, w - 1);
      EXPECT_EQ(p.h, h - 1);
      EXPECT_EQ(p.w, w - 1);
    }
  }
}

TEST(RopeTable, VisionNtkUsesPerAxisScales) {
  auto t = RopeTable::build(config(24, RopeMethod::vision_ntk, 8), 8, 16, false);
  EXPECT_EQ(t.factors().s_h, 1.0);
  EXPECT_EQ(t.factors().s_w, 2.0);
  EXPECT_EQ(std::vector<double>(t.freqs_h().begin(), t.freqs_h().end()), base_frequencies(24, 10000.0));
  auto expect_w = base_frequencies(24, 10000.0 * std::pow(2.0, 24.0 / 22.0));
  for (std::size_t d = 0; d < expect_w.size(); ++d) EXPECT_DOUBLE_EQ(t.freqs_w()[d], expect_w[d]);
}

TEST(RopeTable, AttentionScaleSwitch) {
  auto off = RopeTable::build(config(24, RopeMethod::vision_ntk, 8), 16, 16, false);
  auto on = RopeTable::build(config(24, RopeMethod::vision_ntk, 8), 16, 16, true);
  EXPECT_EQ(off.attention_scale(), 1.0);
  EXPECT_NEAR(on.attention_scale(), std::sqrt(std::log(4.0)), 1e-15);
}

TEST(RopeMethodNames, RoundTrip) {
  for (auto m : {RopeMethod::none, RopeMethod::pi, RopeMethod::ntk, RopeMethod::yarn, RopeMethod::vision_ntk,
                 RopeMethod::vision_yarn}) {
    EXPECT_EQ(parse_rope_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_rope_method("ei"), ConfigError);
}

}  // namespace
}  // namespace fitv2
