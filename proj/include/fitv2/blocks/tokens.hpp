// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Images, patch tokens and the padded variable-length TokenBatch.

#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fitv2/errors.hpp"
#include "fitv2/numerics/tensor.hpp"

namespace fitv2 {

// Channel-major [C, H, W] float image (or latent).
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t index(int c, int h, int w) const {
    return (static_cast<std::size_t>(c) * height + h) * width + w;
  }
  float& at(int c, int h, int w) { return data[index(c, h, w)]; }
  float at(int c, int h, int w) const { return data[index(c, h, w)]; }
  bool operator==(const Image&) const = default;
};

// A labeled image with the size it had before preprocessing.
struct ImageSample {
  Image image;
  int label = 0;
  int source_h = 0;
  int source_w = 0;
};

struct GridPos {
  int h = 0;
  int w = 0;
  bool operator==(const GridPos&) const = default;
};

// Row-major (h, w) pairs of an H x W token grid.
inline std::vector<GridPos> position_map(int grid_h, int grid_w) {
  if (grid_h < 1 || grid_w < 1) {
    throw ShapeError("position_map: extents must be positive, got " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w));
  }
  std::vector<GridPos> out;
  out.reserve(static_cast<std::size_t>(grid_h) * grid_w);
  for (int h = 0; h < grid_h; ++h)
    for (int w = 0; w < grid_w; ++w) out.push_back({h, w});
  return out;
}

// Text index i maps to (i, i); image token (h, w) maps to (M + h, M + w).
inline std::vector<GridPos> t2i_position_indices(int text_len, int grid_h, int grid_w) {
  if (text_len < 0) throw ShapeError("t2i_position_indices: negative text length");
  std::vector<GridPos> out;
  for (int i = 0; i < text_len; ++i) out.push_back({i, i});
  for (auto p : position_map(grid_h, grid_w)) out.push_back({text_len + p.h, text_len + p.w});
  return out;
}

// Tokens of one image: grid (H/p, W/p), each token holds a p x p x C patch
// ordered (row, column, channel).
struct PatchTokens {
  int grid_h = 0;
  int grid_w = 0;
  int token_dim = 0;
  std::vector<float> values;  // grid_h * grid_w * token_dim
  std::vector<GridPos> positions;

  int length() const { return grid_h * grid_w; }
  bool operator==(const PatchTokens&) const = default;
};

inline PatchTokens patchify(const Image& img, int p) {
  if (p < 1) throw ShapeError("patchify: patch size must be >= 1");
  if (img.height % p != 0 || img.width % p != 0 || img.height < p || img.width < p) {
    throw ShapeError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " not divisible by patch " + std::to_string(p));
  }
  PatchTokens t;
  t.grid_h = img.height / p;
  t.grid_w = img.width / p;
  t.token_dim = img.channels * p * p;
  t.values.resize(static_cast<std::size_t>(t.length()) * t.token_dim);
  t.positions = position_map(t.grid_h, t.grid_w);
  std::size_t k = 0;
  for (int gh = 0; gh < t.grid_h; ++gh)
    for (int gw = 0; gw < t.grid_w; ++gw)
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
          for (int c = 0; c < img.channels; ++c) t.values[k++] = img.at(c, gh * p + i, gw * p + j);
  return t;
}

inline Image unpatchify(std::span<const float> tokens, int grid_h, int grid_w, int p, int channels) {
  const std::size_t need = static_cast<std::size_t>(grid_h) * grid_w * p * p * channels;
  if (grid_h < 1 || grid_w < 1 || tokens.size() != need) {
    throw ShapeError("unpatchify: " + std::to_string(tokens.size()) + " values do not match grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " with token dim " +
                     std::to_string(p * p * channels));
  }
  Image img(channels, grid_h * p, grid_w * p);
  std::size_t k = 0;
  for (int gh = 0; gh < grid_h; ++gh)
    for (int gw = 0; gw < grid_w; ++gw)
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
          for (int c = 0; c < channels; ++c) img.at(c, gh * p + i, gw * p + j) = tokens[k++];
  return img;
}

inline Image unpatchify(const PatchTokens& t, int p, int channels) {
  return unpatchify(t.values, t.grid_h, t.grid_w, p, channels);
}

// Padded batch. Valid tokens occupy a prefix of each row; pads hold zero
// values, position (0, 0) and an additive mask of -inf.
template <typename T>
struct TokenBatch {
  Tensor<T> tokens;  // [B, L_max, token_dim]
  std::vector<GridPos> positions;  // B * L_max
  std::shared_ptr<const std::vector<T>> mask;  // B * L_max, 0 valid / -inf pad
  std::vector<std::pair<int, int>> grids;  // token grid per item
  std::vector<int> lengths;

  std::size_t batch() const { return lengths.size(); }
  std::size_t max_len() const { return tokens.dim(1); }
  std::size_t token_dim() const { return tokens.dim(2); }
  bool valid(std::size_t b, std::size_t l) const { return static_cast<int>(l) < lengths[b]; }
};

template <typename T>
TokenBatch<T> pack_tokens(const std::vector<PatchTokens>& items, int max_len) {
  if (items.empty()) throw ShapeError("pack_batch: empty batch");
  const int dim = items.front().token_dim;
  const std::size_t B = items.size(), L = static_cast<std::size_t>(max_len);
  TokenBatch<T> out;
  std::vector<T> values(B * L * dim, T(0));
  out.positions.assign(B * L, GridPos{});
  auto mask = std::make_shared<std::vector<T>>(B * L, -std::numeric_limits<T>::infinity());
  for (std::size_t b = 0; b < B; ++b) {
    const auto& it = items[b];
    if (it.token_dim != dim) {
      throw ShapeError("pack_batch: item " + std::to_string(b) + " has token dim " + std::to_string(it.token_dim) +
                       ", expected " + std::to_string(dim));
    }
    if (it.length() > max_len) {
      throw DataError("pack_batch: item " + std::to_string(b) + " has " + std::to_string(it.length()) +
                      " tokens, budget is " + std::to_string(max_len));
    }
    for (std::size_t k = 0; k < it.values.size(); ++k) values[b * L * dim + k] = static_cast<T>(it.values[k]);
    for (int l = 0; l < it.length(); ++l) {
      out.positions[b * L + l] = it.positions[l];
      (*mask)[b * L + l] = T(0);
    }
    out.grids.emplace_back(it.grid_h, it.grid_w);
    out.lengths.push_back(it.length());
  }
  out.tokens = Tensor<T>({B, L, static_cast<std::size_t>(dim)}, std::move(values));
  out.mask = std::move(mask);
  return out;
}

// Per-item valid token values, the inverse of pack_tokens on the values.
template <typename T>
std::vector<std::vector<float>> unpack_tokens(const TokenBatch<T>& batch, const Tensor<T>& per_token) {
  const std::size_t L = per_token.dim(1), dim = per_token.dim(2);
  std::vector<std::vector<float>> out(batch.batch());
  for (std::size_t b = 0; b < batch.batch(); ++b) {
    const auto n = static_cast<std::size_t>(batch.lengths[b]) * dim;
    auto src = per_token.data().subspan(b * L * dim, n);
    out[b].assign(src.begin(), src.end());
  }
  return out;
}

}  // namespace fitv2
