// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <vector>

#include "fitv2/blocks/model.hpp"
#include "fitv2/flow/objective.hpp"
#include "fitv2/flow/ode.hpp"

namespace fitv2 {

struct SampleSpec {
  int grid_h = 8;
  int grid_w = 8;
  std::vector<int> labels;  // one image per label
  double cfg_scale = 1.0;
  OdeConfig ode;
};

struct SampleResult {
  std::vector<Image> images;
  OdeStats stats;
};

// Guided velocity field over the flattened token state of all images.
template <typename T>
VelocityField guided_field(Model<T>& model, const SampleSpec& spec, const RopeTable& rope) {
  const int L = spec.grid_h * spec.grid_w;
  const int D = model.config().token_dim();
  const std::size_t n = spec.labels.size();
  const bool guided = spec.cfg_scale != 1.0;
  const bool over_budget = L > model.config().max_tokens;
  return [&model, &rope, spec, L, D, n, guided, over_budget](double t, std::span<const double> z,
                                                             std::span<double> out) {
    NoGradGuard no_grad;
    std::vector<PatchTokens> items;
    Conditioning cond;
    const std::size_t passes = guided ? 2 : 1;
    for (std::size_t pass = 0; pass < passes; ++pass) {
      for (std::size_t i = 0; i < n; ++i) {
        PatchTokens tok;
        tok.grid_h = spec.grid_h;
        tok.grid_w = spec.grid_w;
        tok.token_dim = D;
        tok.values.assign(z.begin() + i * L * D, z.begin() + (i + 1) * L * D);
        tok.positions = position_map(spec.grid_h, spec.grid_w);
        items.push_back(std::move(tok));
        cond.t.push_back(t);
        cond.labels.push_back(pass == 0 ? spec.labels[i] : model.config().null_class());
      }
    }
    auto batch = pack_tokens<T>(items, L);
    auto v = model.forward(batch, cond, rope, over_budget);
    const auto vd = v.data();
    const std::size_t per = static_cast<std::size_t>(L) * D;
    for (std::size_t i = 0; i < n * per; ++i) {
      const double vc = vd[i];
      out[i] = guided ? vd[n * per + i] + spec.cfg_scale * (vc - vd[n * per + i]) : vc;
    }
  };
}

// Integrates standard-normal noise at t = 0 to images at t = 1.
template <typename T, typename Rng>
SampleResult ode_sample(Model<T>& model, const SampleSpec& spec, const RopeTable& rope, Rng& rng) {
  if (spec.labels.empty()) throw ConfigError("sample: no labels requested");
  if (!(spec.cfg_scale >= 1.0)) throw ConfigError("cfg scale must be >= 1");
  if (rope.extent_h() < spec.grid_h || rope.extent_w() < spec.grid_w) {
    throw ConfigError("sample: rope table does not cover the requested grid");
  }
  const auto& cfg = model.config();
  const std::size_t per = static_cast<std::size_t>(spec.grid_h) * spec.grid_w * cfg.token_dim();
  std::vector<double> z(per * spec.labels.size());
  std::normal_distribution<double> normal;
  for (auto& v : z) v = normal(rng);
  SampleResult res;
  res.stats = integrate(guided_field(model, spec, rope), z, spec.ode);
  for (std::size_t i = 0; i < spec.labels.size(); ++i) {
    std::vector<float> tok(z.begin() + i * per, z.begin() + (i + 1) * per);
    for (float v : tok) {
      if (!std::isfinite(v)) throw NumericError("sample: non-finite value in generated image");
    }
    res.images.push_back(unpatchify(tok, spec.grid_h, spec.grid_w, cfg.patch, cfg.in_channels));
  }
  return res;
}

}  // namespace fitv2
