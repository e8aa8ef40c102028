// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Aspect-preserving resize under a token budget and the mixed
// resize-or-crop preprocessing.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fitv2/blocks/tokens.hpp"
#include "fitv2/errors.hpp"

namespace fitv2 {

// Bilinear resampling with corner-aligned sample positions.
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: output extents must be positive");
  if (img.height < 1 || img.width < 1) throw ShapeError("resize_bilinear: empty input");
  if (out_h == img.height && out_w == img.width) return img;
  auto coord = [](int i, int n_out, int n_in) {
    return n_out == 1 ? 0.5 * (n_in - 1) : static_cast<double>(i) * (n_in - 1) / (n_out - 1);
  };
  Image out(img.channels, out_h, out_w);
  for (int i = 0; i < out_h; ++i) {
    const double y = coord(i, out_h, img.height);
    const int y0 = std::min(static_cast<int>(y), img.height - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - y0;
    for (int j = 0; j < out_w; ++j) {
      const double x = coord(j, out_w, img.width);
      const int x0 = std::min(static_cast<int>(x), img.width - 1), x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = (1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1);
        const double bot = (1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1);
        out.at(c, i, j) = static_cast<float>((1 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

// Nearest integer, ties toward zero.
inline long round_half_down(double x) { return static_cast<long>(std::ceil(x - 0.5)); }

// Token grid for an H x W image under the budget, or nullopt when a side is
// shorter than one patch. Images under budget are only rounded to patch
// multiples; larger ones are scaled by sqrt(L_max p^2 / HW) first. If rounding
// overshoots the budget, the in-budget neighbour (one patch smaller on either
// side) with the best aspect match wins.
inline std::optional<std::pair<int, int>> budget_grid(int height, int width, int max_tokens, int patch) {
  if (patch < 1 || max_tokens < 1) throw ConfigError("budget_grid: patch and token budget must be positive");
  if (height < patch || width < patch) return std::nullopt;
  const double area = static_cast<double>(height) * width;
  const double cap = static_cast<double>(max_tokens) * patch * patch;
  const double f = area <= cap ? 1.0 : std::sqrt(cap / area);
  const double eh = height * f / patch, ew = width * f / patch;
  const int gh = static_cast<int>(std::max(1L, round_half_down(eh)));
  const int gw = static_cast<int>(std::max(1L, round_half_down(ew)));
  if (static_cast<long>(gh) * gw <= max_tokens) return std::pair{gh, gw};
  const double target = std::log(static_cast<double>(width) / height);
  std::optional<std::pair<int, int>> best;
  double best_err = 0.0;
  for (int h = std::max(1, gh - 1); h <= gh; ++h)
    for (int w = std::max(1, gw - 1); w <= gw; ++w) {
      if (static_cast<long>(h) * w > max_tokens) continue;
      const double err = std::abs(std::log(static_cast<double>(w) / h) - target);
      if (!best || err < best_err || (err == best_err && h * w > best->first * best->second)) {
        best = std::pair{h, w};
        best_err = err;
      }
    }
  if (!best) best = std::pair{1, 1};
  return best;
}

// nullopt marks an image smaller than one patch; callers record and skip it.
inline std::optional<ImageSample> resize_to_budget(const ImageSample& sample, int max_tokens, int patch) {
  const auto grid = budget_grid(sample.image.height, sample.image.width, max_tokens, patch);
  if (!grid) return std::nullopt;
  ImageSample out = sample;
  out.image = resize_bilinear(sample.image, grid->first * patch, grid->second * patch);
  return out;
}

// S x S window; an odd remainder puts the extra pixel before the window.
inline Image center_crop(const Image& img, int size) {
  if (img.height < size || img.width < size) {
    throw ContractError("center_crop: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " is smaller than " + std::to_string(size));
  }
  const int top = (img.height - size + 1) / 2, left = (img.width - size + 1) / 2;
  Image out(img.channels, size, size);
  for (int c = 0; c < img.channels; ++c)
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j) out.at(c, i, j) = img.at(c, top + i, left + j);
  return out;
}

// Aspect-preserving resize so that the shorter side equals `size`.
inline Image resize_short_side(const Image& img, int size) {
  const bool tall = img.height >= img.width;
  const int shorter = tall ? img.width : img.height, longer = tall ? img.height : img.width;
  const int scaled = std::max(size, static_cast<int>(std::lround(static_cast<double>(longer) * size / shorter)));
  return tall ? resize_bilinear(img, scaled, size) : resize_bilinear(img, size, scaled);
}

enum class PreprocessMode { flexible, mixed };

inline PreprocessMode parse_preprocess_mode(std::string_view s) {
  if (s == "flexible") return PreprocessMode::flexible;
  if (s == "mixed") return PreprocessMode::mixed;
  throw ConfigError("unknown preprocess mode '" + std::string(s) + "'");
}

inline std::string_view to_string(PreprocessMode m) { return m == PreprocessMode::flexible ? "flexible" : "mixed"; }

struct PreprocessPolicy {
  PreprocessMode mode = PreprocessMode::mixed;
  int target_size = 16;  // S
  int max_tokens = 64;
  int patch = 2;
  double crop_probability = 0.5;

  void validate() const {
    if (patch < 1 || max_tokens < 1 || target_size < 1) throw ConfigError("preprocess: sizes must be positive");
    if (target_size % patch != 0) throw ConfigError("preprocess: target size must be a multiple of the patch size");
    const long side = target_size / patch;
    if (side * side > max_tokens) throw ConfigError("preprocess: an S x S crop exceeds the token budget");
  }
};

struct PreprocessCounters {
  long resize_only = 0;  // not eligible for cropping
  long coin_resize = 0;  // eligible, coin chose resize
  long coin_crop = 0;    // eligible, coin chose crop
  long skipped = 0;      // smaller than one patch
};

template <typename Rng>
std::optional<ImageSample> mixed_preprocess(const ImageSample& sample, const PreprocessPolicy& policy, Rng& rng,
                                            PreprocessCounters* counters = nullptr) {
  PreprocessCounters scratch;
  auto& n = counters ? *counters : scratch;
  const int S = policy.target_size;
  if (policy.mode == PreprocessMode::mixed && sample.image.height > S && sample.image.width > S) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < policy.crop_probability) {
      ++n.coin_crop;
      ImageSample out = sample;
      out.image = center_crop(resize_short_side(sample.image, S), S);
      return out;
    }
    ++n.coin_resize;
  } else {
    ++n.resize_only;
  }
  auto out = resize_to_budget(sample, policy.max_tokens, policy.patch);
  if (!out) ++n.skipped;
  return out;
}

}  // namespace fitv2
