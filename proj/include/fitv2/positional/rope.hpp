// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Decoupled 2-D rotary position embedding and the training-free
// extrapolation variants (PI, NTK, YaRN and their per-axis vision forms).
//
// Each axis is a 1-D RoPE over half of the head dimension, so a head of
// width D carries D/4 frequencies per axis: theta_d = b^(-4d/D).

#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fitv2/errors.hpp"

namespace fitv2 {

enum class RopeMethod { none, pi, ntk, yarn, vision_ntk, vision_yarn };

inline std::string_view to_string(RopeMethod m) {
  switch (m) {
    case RopeMethod::none: return "none";
    case RopeMethod::pi: return "pi";
    case RopeMethod::ntk: return "ntk";
    case RopeMethod::yarn: return "yarn";
    case RopeMethod::vision_ntk: return "vision_ntk";
    case RopeMethod::vision_yarn: return "vision_yarn";
  }
  return "?";
}

inline RopeMethod parse_rope_method(std::string_view s) {
  for (auto m : {RopeMethod::none, RopeMethod::pi, RopeMethod::ntk, RopeMethod::yarn, RopeMethod::vision_ntk,
                 RopeMethod::vision_yarn}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown rope method '" + std::string(s) + "'");
}

struct RopeConfig {
  int head_dim = 64;
  double base = 10000.0;
  RopeMethod method = RopeMethod::none;
  int train_len = 16;  // sqrt of the training token budget
  double yarn_alpha = 1.0;
  double yarn_beta = 32.0;

  void validate() const {
    if (head_dim <= 0 || head_dim % 4 != 0) {
      throw ConfigError("rope head_dim must be a positive multiple of 4, got " + std::to_string(head_dim));
    }
    if (!(base > 1.0)) throw ConfigError("rope base must exceed 1");
    if (train_len < 1) throw ConfigError("rope train_len must be >= 1");
    if (!(yarn_alpha < yarn_beta)) throw ConfigError("yarn_alpha must be smaller than yarn_beta");
  }
};

struct ScaleFactors {
  double s = 1.0;
  double s_h = 1.0;
  double s_w = 1.0;
};

struct Position2d {
  double h = 0.0;
  double w = 0.0;
};

// theta_d = base^(-4d/head_dim), d in [0, head_dim/4).
inline std::vector<double> base_frequencies(int head_dim, double base) {
  if (head_dim <= 0 || head_dim % 4 != 0) {
    throw ConfigError("head_dim must be a positive multiple of 4, got " + std::to_string(head_dim));
  }
  std::vector<double> freqs(static_cast<std::size_t>(head_dim / 4));
  for (std::size_t d = 0; d < freqs.size(); ++d) {
    freqs[d] = std::pow(base, -4.0 * static_cast<double>(d) / head_dim);
  }
  return freqs;
}

// Rotates consecutive pairs (x[2i], x[2i+1]) by position * freqs[i].
template <typename T>
std::vector<T> rotate_1d(std::span<const T> x, double position, std::span<const double> freqs) {
  if (x.size() != 2 * freqs.size()) {
    throw ShapeError("rotate_1d: vector of " + std::to_string(x.size()) + " entries needs " +
                     std::to_string(x.size() / 2) + " frequencies, got " + std::to_string(freqs.size()));
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < freqs.size(); ++i) {
    const double a = position * freqs[i];
    const double c = std::cos(a), s = std::sin(a);
    out[2 * i] = static_cast<T>(x[2 * i] * c - x[2 * i + 1] * s);
    out[2 * i + 1] = static_cast<T>(x[2 * i] * s + x[2 * i + 1] * c);
  }
  return out;
}

// Global s uses the longer side; the per-axis factors use each side alone.
inline ScaleFactors scale_factors(double height, double width, double train_len) {
  ScaleFactors f;
  f.s = std::max(std::max(height, width) / train_len, 1.0);
  f.s_h = std::max(height / train_len, 1.0);
  f.s_w = std::max(width / train_len, 1.0);
  return f;
}

inline Position2d apply_pi(Position2d p, double s) { return {p.h / s, p.w / s}; }

inline Position2d apply_pi(Position2d p, double s_h, double s_w) { return {p.h / s_h, p.w / s_w}; }

// NTK-aware base: b' = b * s^(D / (D - 2)).
inline double apply_ntk(const RopeConfig& cfg, double s) {
  if (cfg.head_dim <= 2) throw ConfigError("NTK interpolation needs head_dim > 2");
  const double d = cfg.head_dim;
  return cfg.base * std::pow(s, d / (d - 2.0));
}

inline double yarn_ramp(double r, double alpha, double beta) {
  if (r < alpha) return 0.0;
  if (r > beta) return 1.0;
  return (r - alpha) / (beta - alpha);
}

// Number of full rotations dimension d completes over the training length,
// r(d) = L_train / (2 pi b^(4d/D)) = L_train * theta_d / (2 pi).
inline double yarn_ratio(const RopeConfig& cfg, std::size_t d) {
  const double theta = std::pow(cfg.base, -4.0 * static_cast<double>(d) / cfg.head_dim);
  return cfg.train_len * theta / (2.0 * std::numbers::pi);
}

// theta'_d = (1 - gamma) theta_d / s + gamma theta_d, written so s == 1
// returns theta_d exactly.
inline std::vector<double> yarn_blend(const RopeConfig& cfg, double s) {
  auto theta = base_frequencies(cfg.head_dim, cfg.base);
  for (std::size_t d = 0; d < theta.size(); ++d) {
    const double g = yarn_ramp(yarn_ratio(cfg, d), cfg.yarn_alpha, cfg.yarn_beta);
    const double interp = theta[d] / s;
    theta[d] = interp + g * (theta[d] - interp);
  }
  return theta;
}

// Scaling applied to both q and k: 1/sqrt(t) = 0.1 ln(s) + 1.
inline double yarn_magnitude(double s) { return 0.1 * std::log(s) + 1.0; }

struct YarnResult {
  std::vector<double> freqs;
  double magnitude = 1.0;
};

inline YarnResult apply_yarn(const RopeConfig& cfg, double s) {
  if (!(cfg.yarn_alpha < cfg.yarn_beta)) throw ConfigError("yarn_alpha must be smaller than yarn_beta");
  if (s < 1.0) throw ConfigError("yarn scale factor must be >= 1");
  return {yarn_blend(cfg, s), yarn_magnitude(s)};
}

// Per-axis NTK bases (b_h, b_w).
inline std::pair<double, double> apply_vision_ntk(const RopeConfig& cfg, double s_h, double s_w) {
  return {apply_ntk(cfg, s_h), apply_ntk(cfg, s_w)};
}

struct AxisFrequencies {
  std::vector<double> h;
  std::vector<double> w;
};

inline AxisFrequencies apply_vision_yarn(const RopeConfig& cfg, double s_h, double s_w) {
  if (!(cfg.yarn_alpha < cfg.yarn_beta)) throw ConfigError("yarn_alpha must be smaller than yarn_beta");
  return {yarn_blend(cfg, s_h), yarn_blend(cfg, s_w)};
}

// Logit scale max(1, sqrt(ln(test area / train area))).
inline double attention_scale(double h_test, double w_test, double h_train, double w_train) {
  const double ratio = (h_test * w_test) / (h_train * w_train);
  if (ratio <= 1.0) return 1.0;
  return std::max(1.0, std::sqrt(std::log(ratio)));
}

// Immutable per-grid rotary setup: per-axis frequencies, position scaling
// for PI, q/k magnitude for YaRN, and the attention logit scale. Caches
// cos/sin for integer positions inside [0, extent_h) x [0, extent_w).
class RopeTable {
 public:
  // Scale factors follow (grid_h, grid_w); the cache also covers positions up
  // to (cover_h, cover_w) when those are larger.
  static RopeTable build(const RopeConfig& cfg, int grid_h, int grid_w, bool use_attention_scale = false,
                         int cover_h = 0, int cover_w = 0) {
    cfg.validate();
    if (grid_h < 1 || grid_w < 1) throw ConfigError("rope grid extents must be positive");
    RopeTable t;
    t.cfg_ = cfg;
    t.factors_ = scale_factors(grid_h, grid_w, cfg.train_len);
    t.extent_h_ = std::max(grid_h, cover_h);
    t.extent_w_ = std::max(grid_w, cover_w);
    const auto& f = t.factors_;
    switch (cfg.method) {
      case RopeMethod::none:
        t.freqs_h_ = t.freqs_w_ = base_frequencies(cfg.head_dim, cfg.base);
        break;
      case RopeMethod::pi:
        t.freqs_h_ = t.freqs_w_ = base_frequencies(cfg.head_dim, cfg.base);
        t.position_scale_h_ = t.position_scale_w_ = f.s;
        break;
      case RopeMethod::ntk:
        t.freqs_h_ = t.freqs_w_ = base_frequencies(cfg.head_dim, apply_ntk(cfg, f.s));
        break;
      case RopeMethod::yarn: {
        auto y = apply_yarn(cfg, f.s);
        t.freqs_h_ = t.freqs_w_ = y.freqs;
        t.magnitude_ = y.magnitude;
        break;
      }
      case RopeMethod::vision_ntk: {
        auto [bh, bw] = apply_vision_ntk(cfg, f.s_h, f.s_w);
        t.freqs_h_ = base_frequencies(cfg.head_dim, bh);
        t.freqs_w_ = base_frequencies(cfg.head_dim, bw);
        break;
      }
      case RopeMethod::vision_yarn: {
        auto axes = apply_vision_yarn(cfg, f.s_h, f.s_w);
        t.freqs_h_ = std::move(axes.h);
        t.freqs_w_ = std::move(axes.w);
        t.magnitude_ = yarn_magnitude(f.s);
        break;
      }
    }
    if (use_attention_scale) t.attention_scale_ = fitv2::attention_scale(grid_h, grid_w, cfg.train_len, cfg.train_len);
    t.fill_cache();
    return t;
  }

  const RopeConfig& config() const { return cfg_; }
  RopeMethod method() const { return cfg_.method; }
  const ScaleFactors& factors() const { return factors_; }
  std::span<const double> freqs_h() const { return freqs_h_; }
  std::span<const double> freqs_w() const { return freqs_w_; }
  double magnitude() const { return magnitude_; }
  double attention_scale() const { return attention_scale_; }
  int extent_h() const { return extent_h_; }
  int extent_w() const { return extent_w_; }
  std::size_t pairs() const { return 2 * freqs_h_.size(); }

  Position2d scaled_position(int h, int w) const {
    return {h / position_scale_h_, w / position_scale_w_};
  }

  // cos/sin of the head_dim/2 pair angles at integer grid position (h, w);
  // the first head_dim/4 pairs follow h, the rest follow w.
  template <typename T>
  void rotation(int h, int w, std::span<T> cos_out, std::span<T> sin_out) const {
    check_range(h, w);
    const std::size_t q = freqs_h_.size();
    for (std::size_t i = 0; i < q; ++i) {
      cos_out[i] = static_cast<T>(cos_h_[h * q + i]);
      sin_out[i] = static_cast<T>(sin_h_[h * q + i]);
      cos_out[q + i] = static_cast<T>(cos_w_[w * q + i]);
      sin_out[q + i] = static_cast<T>(sin_w_[w * q + i]);
    }
  }

  // Applies the decoupled rotation to one head vector at grid position (h, w).
  template <typename T>
  std::vector<T> rotate_2d(std::span<const T> x, int h, int w) const {
    if (x.size() != 2 * pairs()) {
      throw ShapeError("rotate_2d: head vector has " + std::to_string(x.size()) + " entries, table expects " +
                       std::to_string(2 * pairs()));
    }
    std::vector<T> c(pairs()), s(pairs()), out(x.size());
    rotation<T>(h, w, c, s);
    for (std::size_t i = 0; i < pairs(); ++i) {
      out[2 * i] = x[2 * i] * c[i] - x[2 * i + 1] * s[i];
      out[2 * i + 1] = x[2 * i] * s[i] + x[2 * i + 1] * c[i];
    }
    return out;
  }

 private:
  void check_range(int h, int w) const {
    if (h < 0 || w < 0 || h >= extent_h_ || w >= extent_w_) {
      throw ShapeError("rope position (" + std::to_string(h) + "," + std::to_string(w) + ") outside table extents " +
                       std::to_string(extent_h_) + "x" + std::to_string(extent_w_));
    }
  }

  // Angles are evaluated directly from the (possibly fractional) scaled
  // position, so PI needs no separate code path.
  void fill_cache() {
    const std::size_t q = freqs_h_.size();
    cos_h_.resize(extent_h_ * q);
    sin_h_.resize(extent_h_ * q);
    cos_w_.resize(extent_w_ * q);
    sin_w_.resize(extent_w_ * q);
    for (int h = 0; h < extent_h_; ++h) {
      const double ph = h / position_scale_h_;
      for (std::size_t i = 0; i < q; ++i) {
        cos_h_[h * q + i] = std::cos(ph * freqs_h_[i]);
        sin_h_[h * q + i] = std::sin(ph * freqs_h_[i]);
      }
    }
    for (int w = 0; w < extent_w_; ++w) {
      const double pw = w / position_scale_w_;
      for (std::size_t i = 0; i < q; ++i) {
        cos_w_[w * q + i] = std::cos(pw * freqs_w_[i]);
        sin_w_[w * q + i] = std::sin(pw * freqs_w_[i]);
      }
    }
  }

  RopeConfig cfg_;
  ScaleFactors factors_;
  std::vector<double> freqs_h_, freqs_w_;
  double position_scale_h_ = 1.0;
  double position_scale_w_ = 1.0;
  double magnitude_ = 1.0;
  double attention_scale_ = 1.0;
  int extent_h_ = 0;
  int extent_w_ = 0;
  std::vector<double> cos_h_, sin_h_, cos_w_, sin_w_;
};

}  // namespace fitv2
