// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset directory layout:
//   <id>.sample   int32 C, H, W, label (little-endian) then C*H*W float32
//   index         one id per line
//   dataset.spec  synthetic generator settings (key = value)

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fitv2/blocks/tokens.hpp"
#include "fitv2/errors.hpp"
#include "fitv2/pipeline/synth.hpp"

namespace fitv2 {

namespace detail {

template <typename V>
void put_le(std::ostream& out, V v) {
  static_assert(sizeof(V) == 4);
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                              static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

template <typename V>
V get_le(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                          static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  V v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace detail

inline void write_sample(const std::filesystem::path& path, const Image& img, int label) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::int32_t v : {img.channels, img.height, img.width, label}) detail::put_le(out, v);
  for (float v : img.data) detail::put_le(out, v);
  if (!out) throw DataError("write failed for " + path.string());
}

inline ImageSample read_sample(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw DataError(path.string() + ": truncated header");
  const int C = detail::get_le<std::int32_t>(&bytes[0]);
  const int H = detail::get_le<std::int32_t>(&bytes[4]);
  const int W = detail::get_le<std::int32_t>(&bytes[8]);
  const int label = detail::get_le<std::int32_t>(&bytes[12]);
  if (C < 1 || H < 1 || W < 1 || label < 0) {
    throw DataError(path.string() + ": bad header " + std::to_string(C) + "," + std::to_string(H) + "," +
                    std::to_string(W) + "," + std::to_string(label));
  }
  const std::size_t n = static_cast<std::size_t>(C) * H * W;
  if (bytes.size() != 16 + 4 * n) {
    throw DataError(path.string() + ": expected " + std::to_string(16 + 4 * n) + " bytes, found " +
                    std::to_string(bytes.size()));
  }
  ImageSample s;
  s.image = Image(C, H, W);
  for (std::size_t i = 0; i < n; ++i) s.image.data[i] = detail::get_le<float>(&bytes[16 + 4 * i]);
  s.label = label;
  s.source_h = H;
  s.source_w = W;
  return s;
}

// Ids are zero-padded indices.
inline std::string sample_id(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

inline void save_dataset(const std::filesystem::path& dir, std::span<const ImageSample> samples,
                         const SynthSpec* spec = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream index(dir / "index", std::ios::trunc);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto id = sample_id(i);
    write_sample(dir / (id + ".sample"), samples[i].image, samples[i].label);
    index << id << "\n";
  }
  if (spec) {
    std::ofstream out(dir / "dataset.spec", std::ios::trunc);
    out << format_synth_spec(*spec);
  }
  if (!index) throw DataError("cannot write " + (dir / "index").string());
}

inline std::vector<ImageSample> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
  std::ifstream index(dir / "index");
  if (!index) throw DataError("dataset " + dir.string() + " has no index file");
  std::vector<ImageSample> out;
  std::string line;
  while (std::getline(index, line)) {
    const auto id = std::string(trim(line));
    if (id.empty()) continue;
    out.push_back(read_sample(dir / (id + ".sample")));
  }
  if (out.empty()) throw DataError("dataset " + dir.string() + " is empty");
  return out;
}

// Reads an indexed dataset, or generates one from dataset.spec when no index
// exists yet (and writes it so the next run reads the same records).
inline std::vector<ImageSample> open_dataset(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir / "index")) return load_dataset(dir);
  if (std::filesystem::exists(dir / "dataset.spec")) {
    const auto spec = parse_synth_spec(read_text_file((dir / "dataset.spec").string()), (dir / "dataset.spec").string());
    auto data = synth_dataset(spec);
    save_dataset(dir, data);
    return data;
  }
  throw DataError("dataset " + dir.string() + " has neither an index nor a dataset.spec");
}

// Binary PPM of channels 0..2 mapped from [-1, 1] to [0, 255]; fewer channels
// are repeated.
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (int h = 0; h < img.height; ++h)
    for (int w = 0; w < img.width; ++w)
      for (int c = 0; c < 3; ++c) {
        const float v = img.at(std::min(c, img.channels - 1), h, w);
        const double scaled = std::clamp((static_cast<double>(v) + 1.0) * 127.5, 0.0, 255.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
      }
}

}  // namespace fitv2
