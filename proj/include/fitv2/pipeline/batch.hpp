// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fitv2/blocks/tokens.hpp"
#include "fitv2/pipeline/preprocess.hpp"

namespace fitv2 {

// Patchifies and pads; an oversize item is reported by its batch position.
template <typename T>
TokenBatch<T> pack_batch(std::span<const ImageSample* const> samples, int max_tokens, int patch, int channels) {
  std::vector<PatchTokens> toks;
  toks.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& img = samples[i]->image;
    if (img.channels != channels) {
      throw DataError("item " + std::to_string(i) + " has " + std::to_string(img.channels) +
                      " channels, model expects " + std::to_string(channels));
    }
    toks.push_back(patchify(img, patch));
  }
  return pack_tokens<T>(toks, max_tokens);
}

template <typename T>
TokenBatch<T> pack_batch(std::span<const ImageSample> samples, int max_tokens, int patch, int channels) {
  std::vector<const ImageSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return pack_batch<T>(std::span<const ImageSample* const>(ptrs), max_tokens, patch, channels);
}

struct PreparedDataset {
  std::vector<ImageSample> samples;
  PreprocessCounters counters;
  std::vector<std::string> warnings;
};

// Applies the policy once per sample with a generator derived from (seed, i).
inline PreparedDataset prepare_dataset(std::span<const ImageSample> raw, const PreprocessPolicy& policy,
                                       std::uint64_t seed) {
  policy.validate();
  PreparedDataset out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0xc0deu};
    std::mt19937_64 rng(seq);
    auto s = mixed_preprocess(raw[i], policy, rng, &out.counters);
    if (s) {
      out.samples.push_back(std::move(*s));
    } else {
      out.warnings.push_back("sample " + std::to_string(i) + " (" + std::to_string(raw[i].image.height) + "x" +
                             std::to_string(raw[i].image.width) + ") is smaller than one patch; skipped");
    }
  }
  return out;
}

}  // namespace fitv2
