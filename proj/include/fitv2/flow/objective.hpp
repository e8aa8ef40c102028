// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Rectified-flow objective. t = 0 is noise, t = 1 is data; the regression
// target is the straight-line velocity x1 - x0.

#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fitv2/blocks/tokens.hpp"
#include "fitv2/errors.hpp"
#include "fitv2/numerics.hpp"

namespace fitv2 {

enum class TimestepKind { uniform, logit_normal };

inline std::string_view to_string(TimestepKind k) { return k == TimestepKind::uniform ? "uniform" : "logit_normal"; }

inline TimestepKind parse_timestep_kind(std::string_view s) {
  if (s == "uniform") return TimestepKind::uniform;
  if (s == "logit_normal") return TimestepKind::logit_normal;
  throw ConfigError("unknown timestep sampler '" + std::string(s) + "'");
}

// Logit-normal: t = sigmoid(u), u ~ Normal(mean, std).
struct TimestepSampler {
  TimestepKind kind = TimestepKind::logit_normal;
  double mean = 0.0;
  double std = 1.0;

  void validate() const {
    if (kind == TimestepKind::logit_normal && !(std > 0.0)) throw ConfigError("logit-normal std must be positive");
  }

  // Strictly inside (0, 1).
  template <typename Rng>
  double operator()(Rng& rng) const {
    for (;;) {
      double t;
      if (kind == TimestepKind::uniform) {
        t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      } else {
        const double u = std::normal_distribution<double>(mean, std)(rng);
        t = 1.0 / (1.0 + std::exp(-u));
      }
      if (t > 0.0 && t < 1.0) return t;
    }
  }
};

template <typename T>
struct InterpolantSample {
  std::vector<T> x0, x1, xt, target_v;
  double t = 0.0;
};

template <typename T>
InterpolantSample<T> make_interpolant(std::span<const T> x0, std::span<const T> x1, double t) {
  if (x0.size() != x1.size()) {
    throw ShapeError("make_interpolant: " + std::to_string(x0.size()) + " vs " + std::to_string(x1.size()) + " values");
  }
  InterpolantSample<T> s;
  s.t = t;
  s.x0.assign(x0.begin(), x0.end());
  s.x1.assign(x1.begin(), x1.end());
  s.xt.resize(x0.size());
  s.target_v.resize(x0.size());
  const T tt = static_cast<T>(t), one_minus = static_cast<T>(1.0 - t);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    s.xt[i] = tt * x1[i] + one_minus * x0[i];
    s.target_v[i] = x1[i] - x0[i];
  }
  return s;
}

// Mean over valid elements of (pred - target)^2. Pad rows of both tensors are
// ignored whatever they hold.
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target, std::span<const int> lengths) {
  if (pred.shape() != target.shape() || pred.rank() != 3) {
    throw ShapeError("masked_mse: " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  }
  const std::size_t B = pred.dim(0), L = pred.dim(1), D = pred.dim(2);
  if (lengths.size() != B) throw ShapeError("masked_mse: lengths do not match batch");
  std::size_t valid = 0;
  for (int n : lengths) valid += static_cast<std::size_t>(n);
  if (valid == 0) throw ShapeError("masked_mse: no valid tokens");
  std::vector<T> weights(B * L * D, T(0));
  std::vector<T> tgt(target.data().begin(), target.data().end());
  const T w = static_cast<T>(1.0 / static_cast<double>(valid * D));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t k = 0; k < D; ++k) {
        const std::size_t i = (b * L + l) * D + k;
        if (static_cast<int>(l) < lengths[b]) weights[i] = w;
        else tgt[i] = pred.data()[i];  // pads contribute exact zeros
      }
  auto diff = sub(pred, Tensor<T>(pred.shape(), std::move(tgt)));
  return sum_all(mul(square(diff), Tensor<T>(pred.shape(), std::move(weights))));
}

// v_uncond + w (v_cond - v_uncond).
template <typename T>
std::vector<T> cfg_velocity(std::span<const T> v_cond, std::span<const T> v_uncond, double w) {
  if (v_cond.size() != v_uncond.size()) throw ShapeError("cfg_velocity: shape mismatch");
  if (!(w >= 1.0)) throw ConfigError("cfg scale must be >= 1");
  std::vector<T> out(v_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(v_uncond[i] + w * (v_cond[i] - v_uncond[i]));
  return out;
}

// Noisy inputs and velocity targets for a packed clean batch. Noise is drawn
// for valid tokens only, item by item, so the draw sequence does not depend
// on the padded length.
template <typename T>
struct FlowInputs {
  TokenBatch<T> noisy;
  Tensor<T> target;
  std::vector<double> t;
};

template <typename T, typename Rng>
FlowInputs<T> make_flow_inputs(const TokenBatch<T>& clean, std::span<const double> t, Rng& rng) {
  const std::size_t B = clean.batch(), L = clean.max_len(), D = clean.token_dim();
  if (t.size() != B) throw ShapeError("make_flow_inputs: one t per item required");
  std::normal_distribution<double> normal;
  std::vector<T> xt(B * L * D, T(0)), v(B * L * D, T(0));
  const auto x1 = clean.tokens.data();
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n = static_cast<std::size_t>(clean.lengths[b]) * D, off = b * L * D;
    std::vector<T> x0(n);
    for (auto& z : x0) z = static_cast<T>(normal(rng));
    auto s = make_interpolant<T>(x0, x1.subspan(off, n), t[b]);
    std::copy(s.xt.begin(), s.xt.end(), xt.begin() + off);
    std::copy(s.target_v.begin(), s.target_v.end(), v.begin() + off);
  }
  FlowInputs<T> out{clean, Tensor<T>(clean.tokens.shape(), std::move(v)), {t.begin(), t.end()}};
  out.noisy.tokens = Tensor<T>(clean.tokens.shape(), std::move(xt));
  return out;
}

}  // namespace fitv2
