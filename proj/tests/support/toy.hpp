// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Small model configurations and batch builders shared by the tests.

#pragma once

#include <random>
#include <utility>
#include <vector>

#include "fitv2/blocks.hpp"

namespace fitv2::testing {

// One block, d=8, two heads of width 4, 1x1 patches on 2 channels.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.patch = 1;
  c.in_channels = 2;
  c.max_tokens = 9;
  c.num_classes = 3;
  return c;
}

// The desk-scale model: N=4, d=96, 4 heads, patch 2 on 4 channels, 64 tokens.
inline ModelConfig toy_config() {
  ModelConfig c;
  c.layers = 4;
  c.hidden = 96;
  c.heads = 4;
  c.patch = 2;
  c.in_channels = 4;
  c.max_tokens = 64;
  c.num_classes = 4;
  return c;
}

// Overwrites every parameter (including zero-initialized ones) with N(0, scale).
template <typename T>
void randomize(Model<T>& model, std::mt19937_64& rng, double scale = 0.2) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& it : model.params().items())
    for (auto& v : it.tensor.mutable_data()) v = static_cast<T>(dist(rng));
}

inline PatchTokens random_tokens(int grid_h, int grid_w, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  PatchTokens t;
  t.grid_h = grid_h;
  t.grid_w = grid_w;
  t.token_dim = dim;
  t.values.resize(static_cast<std::size_t>(grid_h) * grid_w * dim);
  for (auto& v : t.values) v = static_cast<float>(dist(rng));
  t.positions = position_map(grid_h, grid_w);
  return t;
}

template <typename T>
TokenBatch<T> random_batch(const ModelConfig& cfg, std::mt19937_64& rng, const std::vector<std::pair<int, int>>& grids,
                           int max_len) {
  std::vector<PatchTokens> items;
  for (auto [h, w] : grids) items.push_back(random_tokens(h, w, cfg.token_dim(), rng));
  return pack_tokens<T>(items, max_len);
}

// Same batch with pad token values replaced by large random numbers.
template <typename T>
TokenBatch<T> scramble_padding(const TokenBatch<T>& batch, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-50.0, 50.0);
  auto out = batch;
  std::vector<T> values(batch.tokens.data().begin(), batch.tokens.data().end());
  const std::size_t L = batch.max_len(), dim = batch.token_dim();
  for (std::size_t b = 0; b < batch.batch(); ++b)
    for (std::size_t l = batch.lengths[b]; l < L; ++l)
      for (std::size_t k = 0; k < dim; ++k) values[(b * L + l) * dim + k] = static_cast<T>(dist(rng));
  out.tokens = Tensor<T>(batch.tokens.shape(), std::move(values));
  return out;
}

// Same valid tokens padded to `new_len` with random pad values.
template <typename T>
TokenBatch<T> repad(const TokenBatch<T>& batch, std::size_t new_len, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-50.0, 50.0);
  const std::size_t B = batch.batch(), L = batch.max_len(), dim = batch.token_dim();
  TokenBatch<T> out;
  std::vector<T> values(B * new_len * dim);
  for (auto& v : values) v = static_cast<T>(dist(rng));
  out.positions.assign(B * new_len, GridPos{});
  auto mask = std::make_shared<std::vector<T>>(B * new_len, -std::numeric_limits<T>::infinity());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < static_cast<std::size_t>(batch.lengths[b]); ++l) {
      for (std::size_t k = 0; k < dim; ++k) values[(b * new_len + l) * dim + k] = batch.tokens.data()[(b * L + l) * dim + k];
      out.positions[b * new_len + l] = batch.positions[b * L + l];
      (*mask)[b * new_len + l] = T(0);
    }
  out.tokens = Tensor<T>({B, new_len, dim}, std::move(values));
  out.mask = std::move(mask);
  out.grids = batch.grids;
  out.lengths = batch.lengths;
  return out;
}

template <typename T>
RopeTable table_for(const Model<T>& model, int grid_h, int grid_w, RopeMethod method = RopeMethod::none) {
  return RopeTable::build(model.rope_config(method), grid_h, grid_w);
}

}  // namespace fitv2::testing
