// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fitv2/adapt/freeze.hpp"
#include "fitv2/flow/train.hpp"

namespace fitv2 {

// VisionNTK bases for the square grid of the new budget; the cache also
// covers every grid in `data`.
template <typename T>
RopeTable posttrain_rope(const Model<T>& model, int max_tokens_hi, std::span<const ImageSample> data) {
  const int side = static_cast<int>(std::floor(std::sqrt(static_cast<double>(max_tokens_hi))));
  int cover_h = side, cover_w = side;
  const int p = model.config().patch;
  for (const auto& s : data) {
    cover_h = std::max(cover_h, s.image.height / p);
    cover_w = std::max(cover_w, s.image.width / p);
  }
  return RopeTable::build(model.rope_config(RopeMethod::vision_ntk), side, side, false, cover_h, cover_w);
}

// Runs `steps` more optimizer steps on `data_hi` packed under the larger
// budget, updating only the tensors the plan marks trainable.
template <typename T>
std::vector<LossRecord> posttrain(TrainState<T>& st, const FreezePlan& plan, std::span<const ImageSample> data_hi,
                                  int max_tokens_hi, long steps, TrainConfig cfg,
                                  const std::function<void(const LossRecord&)>& on_record = {}) {
  if (max_tokens_hi <= st.model.config().max_tokens) {
    throw ConfigError("adapt: new token budget " + std::to_string(max_tokens_hi) + " must exceed the pre-training budget " +
                      std::to_string(st.model.config().max_tokens));
  }
  if (steps < 0) throw ConfigError("adapt: steps must be >= 0");
  plan.apply(st.model);
  plan.apply(st.ema);
  cfg.token_budget = max_tokens_hi;
  cfg.steps = st.step + steps;
  const auto rope = posttrain_rope(st.model, max_tokens_hi, data_hi);
  return train_loop(st, data_hi, cfg, steps, on_record, &rope);
}

}  // namespace fitv2
