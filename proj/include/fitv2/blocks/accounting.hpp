// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Analytic parameter and FLOP counts. No tensors are allocated.

#pragma once

#include <cstdint>

#include "fitv2/blocks/config.hpp"

namespace fitv2 {

inline constexpr int kTimestepFrequencies = 256;

struct ParameterBreakdown {
  std::int64_t attention = 0;     // q, k, v, o over all blocks
  std::int64_t swiglu = 0;        // gate, up, down over all blocks
  std::int64_t adaln_lora = 0;    // per-block low-rank modulation
  std::int64_t global_adaln = 0;  // shared modulation
  std::int64_t embedders = 0;     // patch, timestep, class
  std::int64_t final = 0;         // final modulation and output linear
  std::int64_t total = 0;

  // Weight matrices only, summed over blocks.
  std::int64_t attention_weights = 0;
  std::int64_t swiglu_weights = 0;
  std::int64_t adaln_lora_weights = 0;
  std::int64_t biases = 0;  // every bias vector in the model
};

inline ParameterBreakdown count_parameters(const ModelConfig& cfg) {
  const std::int64_t d = cfg.hidden, h = cfg.mlp_hidden(), r = cfg.rank(), n = cfg.layers;
  const std::int64_t tok = cfg.token_dim();
  ParameterBreakdown b;
  b.attention_weights = n * 4 * d * d;
  b.swiglu_weights = n * 3 * d * h;
  b.adaln_lora_weights = n * (d * r + r * 6 * d);
  b.attention = b.attention_weights + n * 4 * d;
  b.swiglu = b.swiglu_weights + n * (2 * h + d);
  b.adaln_lora = b.adaln_lora_weights + n * (r + 6 * d);
  b.global_adaln = d * 6 * d + 6 * d;
  const std::int64_t patch = tok * d + d;
  const std::int64_t time = kTimestepFrequencies * d + d + d * d + d;
  const std::int64_t label = (cfg.num_classes + 1) * d;
  b.embedders = patch + time + label;
  b.final = d * 2 * d + 2 * d + d * tok + tok;
  b.total = b.attention + b.swiglu + b.adaln_lora + b.global_adaln + b.embedders + b.final;
  b.biases = n * (4 * d + 2 * h + d + r + 6 * d) + 6 * d + d + d + d + 2 * d + tok;
  return b;
}

// Main weights of one block as itemized for the original FiT block
// (full-rank AdaLN) and for FiTv2 (AdaLN-LoRA).
struct BlockWeights {
  std::int64_t attention = 0;
  std::int64_t swiglu = 0;
  std::int64_t adaln = 0;
};

inline BlockWeights fit_v1_block_weights(std::int64_t d) { return {4 * d * d, 8 * d * d, 6 * d * d}; }

inline BlockWeights fitv2_block_weights(const ModelConfig& cfg) {
  const std::int64_t d = cfg.hidden, h = cfg.mlp_hidden(), r = cfg.rank();
  return {4 * d * d, 3 * d * h, d * r + r * 6 * d};
}

// multiply_accumulate counts one per multiply-add (the convention under
// which the published GFLOPs column is reproduced); two_mnk counts 2mnk.
enum class FlopConvention { multiply_accumulate, two_mnk };

struct FlopBreakdown {
  double projections = 0;  // patch embed, q/k/v/o, SwiGLU, final linear
  double attention = 0;    // scores and value mixing
  double conditioning = 0; // timestep MLP, global and per-block AdaLN
  double total = 0;
};

inline FlopBreakdown estimate_flops(const ModelConfig& cfg, std::int64_t tokens,
                                    FlopConvention convention = FlopConvention::multiply_accumulate) {
  const double d = cfg.hidden, h = cfg.mlp_hidden(), r = cfg.rank(), n = cfg.layers, tok = cfg.token_dim();
  const double L = static_cast<double>(tokens);
  const double k = convention == FlopConvention::two_mnk ? 2.0 : 1.0;
  FlopBreakdown f;
  f.projections = k * (L * tok * d + n * L * (4 * d * d + 3 * d * h) + L * d * tok);
  f.attention = k * n * 2 * L * L * d;
  f.conditioning =
      k * (kTimestepFrequencies * d + d * d + d * 6 * d + n * (d * r + r * 6 * d) + d * 2 * d);
  f.total = f.projections + f.attention + f.conditioning;
  return f;
}

inline double training_flops(double forward_flops, double batch, double steps) { return forward_flops * batch * steps * 3; }

}  // namespace fitv2
