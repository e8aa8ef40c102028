// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic class-conditional images: one axis-aligned rectangle per image on
// a textured background. Class k paints its rectangle with colour
// `class_color(k)`: +1 on channel k mod C, -0.5 elsewhere. The background is
// a random-phase sinusoid of amplitude `texture` plus white noise of std
// `noise`, so the per-class channel mean inside the rectangle is the colour
// and outside it is zero.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fitv2/blocks/tokens.hpp"
#include "fitv2/kv.hpp"

namespace fitv2 {

struct WeightedResolution {
  int height = 0;
  int width = 0;
  double weight = 1.0;
  bool operator==(const WeightedResolution&) const = default;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  int count = 2048;
  int classes = 4;
  int channels = 4;
  std::vector<WeightedResolution> resolutions{{16, 16, 2.0}, {10, 20, 1.0}, {20, 10, 1.0}, {8, 24, 1.0}, {24, 8, 1.0}};
  double rect_min = 0.3;  // rectangle side as a fraction of the image side
  double rect_max = 0.7;
  double texture = 0.2;
  double noise = 0.05;

  void validate() const {
    if (count < 1) throw ConfigError("dataset.count must be >= 1");
    if (classes < 1) throw ConfigError("dataset.classes must be >= 1");
    if (channels < 1) throw ConfigError("dataset.channels must be >= 1");
    if (resolutions.empty()) throw ConfigError("dataset.resolutions must list at least one size");
    for (const auto& r : resolutions) {
      if (r.height < 1 || r.width < 1 || !(r.weight > 0.0)) {
        throw ConfigError("dataset.resolutions entries need positive extents and weight");
      }
    }
    if (!(rect_min > 0.0 && rect_min <= rect_max && rect_max <= 1.0)) {
      throw ConfigError("dataset.rect_min/rect_max must satisfy 0 < min <= max <= 1");
    }
    if (!(texture >= 0.0) || !(noise >= 0.0)) throw ConfigError("dataset.texture and dataset.noise must be >= 0");
  }

  bool operator==(const SynthSpec&) const = default;
};

// "16x16:2,10x20:1"
inline std::vector<WeightedResolution> parse_resolutions(const std::string& text) {
  std::vector<WeightedResolution> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = std::string(trim(item));
    const auto x = t.find('x');
    if (x == std::string::npos) throw ConfigError("resolution '" + t + "' must look like HxW[:weight]");
    const auto colon = t.find(':');
    WeightedResolution r;
    r.height = static_cast<int>(parse_int(t.substr(0, x), "resolution height"));
    r.width = static_cast<int>(parse_int(t.substr(x + 1, colon == std::string::npos ? std::string::npos : colon - x - 1),
                                         "resolution width"));
    if (colon != std::string::npos) r.weight = parse_double(t.substr(colon + 1), "resolution weight");
    out.push_back(r);
  }
  return out;
}

inline std::string format_resolutions(const std::vector<WeightedResolution>& rs) {
  std::string s;
  for (const auto& r : rs) {
    if (!s.empty()) s += ",";
    s += std::to_string(r.height) + "x" + std::to_string(r.width) + ":" + format_double(r.weight);
  }
  return s;
}

inline SynthSpec parse_synth_spec(std::string_view text, const std::string& source) {
  SynthSpec s;
  for (const auto& e : parse_kv(text, source)) {
    const std::string what = source + ": " + e.key;
    if (e.key == "seed") s.seed = static_cast<std::uint64_t>(parse_int(e.value, what));
    else if (e.key == "count") s.count = static_cast<int>(parse_int(e.value, what));
    else if (e.key == "classes") s.classes = static_cast<int>(parse_int(e.value, what));
    else if (e.key == "channels") s.channels = static_cast<int>(parse_int(e.value, what));
    else if (e.key == "resolutions") s.resolutions = parse_resolutions(e.value);
    else if (e.key == "rect_min") s.rect_min = parse_double(e.value, what);
    else if (e.key == "rect_max") s.rect_max = parse_double(e.value, what);
    else if (e.key == "texture") s.texture = parse_double(e.value, what);
    else if (e.key == "noise") s.noise = parse_double(e.value, what);
    else throw ConfigError(source + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
  }
  s.validate();
  return s;
}

inline std::string format_synth_spec(const SynthSpec& s) {
  std::ostringstream o;
  o << "seed = " << s.seed << "\n"
    << "count = " << s.count << "\n"
    << "classes = " << s.classes << "\n"
    << "channels = " << s.channels << "\n"
    << "resolutions = " << format_resolutions(s.resolutions) << "\n"
    << "rect_min = " << format_double(s.rect_min) << "\n"
    << "rect_max = " << format_double(s.rect_max) << "\n"
    << "texture = " << format_double(s.texture) << "\n"
    << "noise = " << format_double(s.noise) << "\n";
  return o.str();
}

inline std::vector<float> class_color(int label, int channels) {
  std::vector<float> c(channels, -0.5f);
  c[label % channels] = 1.0f;
  return c;
}

struct Rect {
  int top = 0, left = 0, height = 0, width = 0;
  bool contains(int h, int w) const { return h >= top && h < top + height && w >= left && w < left + width; }
};

// One image of class `label` at H x W; `rect` receives the painted region.
template <typename Rng>
Image synth_image(const SynthSpec& spec, int label, int height, int width, Rng& rng, Rect* rect = nullptr) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss;
  auto side = [&](int n) {
    const int lo = std::max(1, static_cast<int>(std::ceil(spec.rect_min * n)));
    const int hi = std::max(lo, static_cast<int>(std::floor(spec.rect_max * n)));
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  Rect r;
  r.height = side(height);
  r.width = side(width);
  r.top = std::uniform_int_distribution<int>(0, height - r.height)(rng);
  r.left = std::uniform_int_distribution<int>(0, width - r.width)(rng);
  const double fy = 1.0 + 2.0 * unit(rng), fx = 1.0 + 2.0 * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const auto color = class_color(label, spec.channels);
  Image img(spec.channels, height, width);
  for (int c = 0; c < spec.channels; ++c)
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w) {
        double v;
        if (r.contains(h, w)) {
          v = color[c];
        } else {
          const double arg = 2.0 * std::numbers::pi * (fy * h / height + fx * w / width) + phase + c;
          v = spec.texture * std::sin(arg);
        }
        img.at(c, h, w) = static_cast<float>(v + spec.noise * gauss(rng));
      }
  if (rect) *rect = r;
  return img;
}

// Deterministic in spec.seed: sample i draws from its own generator, so
// prefixes of larger datasets coincide.
inline std::vector<ImageSample> synth_dataset(const SynthSpec& spec) {
  spec.validate();
  std::vector<double> weights;
  for (const auto& r : spec.resolutions) weights.push_back(r.weight);
  std::vector<ImageSample> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    const auto& res = spec.resolutions[pick(rng)];
    const int label = std::uniform_int_distribution<int>(0, spec.classes - 1)(rng);
    ImageSample s;
    s.image = synth_image(spec, label, res.height, res.width, rng);
    s.label = label;
    s.source_h = res.height;
    s.source_w = res.width;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace fitv2
