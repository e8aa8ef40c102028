// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "fitv2/errors.hpp"

namespace fitv2 {

struct ModelConfig {
  int layers = 4;
  int hidden = 96;
  int heads = 4;
  int patch = 2;
  int lora_rank = 0;  // 0 selects hidden / 4
  int in_channels = 4;
  int max_tokens = 64;
  int num_classes = 4;
  double rope_base = 10000.0;

  int head_dim() const { return hidden / heads; }
  int rank() const { return lora_rank > 0 ? lora_rank : hidden / 4; }
  int token_dim() const { return in_channels * patch * patch; }
  int null_class() const { return num_classes; }

  // 8d/3 when integral, otherwise rounded up to a multiple of the head count.
  int mlp_hidden() const {
    if ((8 * hidden) % 3 == 0) return 8 * hidden / 3;
    const int raw = (8 * hidden + 2) / 3;
    return (raw + heads - 1) / heads * heads;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
    if (layers < 1) fail("layers must be >= 1");
    if (hidden < 1 || heads < 1) fail("hidden and heads must be positive");
    if (hidden % heads != 0) fail("hidden " + std::to_string(hidden) + " not divisible by heads " + std::to_string(heads));
    if (head_dim() % 4 != 0) fail("head_dim " + std::to_string(head_dim()) + " must be divisible by 4");
    if (patch < 1) fail("patch must be >= 1");
    if (rank() < 1) fail("lora rank must be >= 1");
    if (in_channels < 1) fail("in_channels must be >= 1");
    if (max_tokens < 1) fail("max_tokens must be >= 1");
    if (num_classes < 1) fail("num_classes must be >= 1");
    if (!(rope_base > 1.0)) fail("rope base must exceed 1");
  }

  // Side of the square token grid that fills the budget.
  int train_len() const {
    int s = 1;
    while ((s + 1) * (s + 1) <= max_tokens) ++s;
    return s;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Published presets: patch 2 on 4-channel latents, 256-token budget, 1000 classes.
inline std::optional<ModelConfig> model_preset(std::string_view name) {
  ModelConfig c;
  c.patch = 2;
  c.in_channels = 4;
  c.max_tokens = 256;
  c.num_classes = 1000;
  if (name == "B") {
    c.layers = 15, c.hidden = 768, c.heads = 12;
  } else if (name == "XL") {
    c.layers = 36, c.hidden = 1152, c.heads = 16;
  } else if (name == "3B") {
    c.layers = 40, c.hidden = 2304, c.heads = 24;
  } else {
    return std::nullopt;
  }
  return c;
}

}  // namespace fitv2
