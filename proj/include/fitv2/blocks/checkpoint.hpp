// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint directory: `manifest` (text) and `weights.bin` (little-endian
// float32, row-major, tensors concatenated in manifest order).
//
//   fitv2-checkpoint
//   format_version 1
//   config.<field> <value>
//   meta.<key> <value>
//   tensor <name> float32 <d0>x<d1>... <byte offset> <crc32 hex>

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fitv2/blocks/config.hpp"
#include "fitv2/blocks/model.hpp"
#include "fitv2/errors.hpp"

namespace fitv2 {

inline constexpr int kCheckpointFormatVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, std::string> meta;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline std::uint32_t crc32_of(std::span<const char> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

namespace detail {

inline void write_f32_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline float read_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape_text(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) s.push_back(std::stoull(part));
  return s;
}

}  // namespace detail

inline std::map<std::string, std::string> config_fields(const ModelConfig& c) {
  std::ostringstream base;
  base.precision(17);
  base << c.rope_base;
  return {{"layers", std::to_string(c.layers)},       {"hidden", std::to_string(c.hidden)},
          {"heads", std::to_string(c.heads)},         {"patch", std::to_string(c.patch)},
          {"lora_rank", std::to_string(c.lora_rank)}, {"in_channels", std::to_string(c.in_channels)},
          {"max_tokens", std::to_string(c.max_tokens)}, {"num_classes", std::to_string(c.num_classes)},
          {"rope_base", base.str()}};
}

inline void set_config_field(ModelConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "layers") c.layers = std::stoi(value);
    else if (key == "hidden") c.hidden = std::stoi(value);
    else if (key == "heads") c.heads = std::stoi(value);
    else if (key == "patch") c.patch = std::stoi(value);
    else if (key == "lora_rank") c.lora_rank = std::stoi(value);
    else if (key == "in_channels") c.in_channels = std::stoi(value);
    else if (key == "max_tokens") c.max_tokens = std::stoi(value);
    else if (key == "num_classes") c.num_classes = std::stoi(value);
    else if (key == "rope_base") c.rope_base = std::stod(value);
    else throw DataError("checkpoint: unknown config field '" + key + "'");
  } catch (const std::logic_error&) {
    throw DataError("checkpoint: bad value '" + value + "' for config field '" + key + "'");
  }
}

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "fitv2-checkpoint\nformat_version " << kCheckpointFormatVersion << "\n";
  for (const auto& [k, v] : config_fields(ckpt.config)) manifest << "config." << k << " " << v << "\n";
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint meta entries must be single-line with no spaces in the key");
    }
    manifest << "meta." << k << " " << v << "\n";
  }
  std::string weights;
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) throw ShapeError("checkpoint: tensor " + t.name + " size mismatch");
    const std::size_t offset = weights.size();
    for (float v : t.values) detail::write_f32_le(weights, v);
    const auto crc = crc32_of(std::span<const char>(weights.data() + offset, weights.size() - offset));
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", crc);
    manifest << "tensor " << t.name << " float32 " << detail::shape_text(t.shape) << " " << offset << " " << hex
             << "\n";
  }
  std::ofstream(dir / "weights.bin", std::ios::binary).write(weights.data(), static_cast<std::streamsize>(weights.size()));
  std::ofstream(dir / "manifest") << manifest.str();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest");
  if (!mf) throw DataError("checkpoint: cannot open " + (dir / "manifest").string());
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) throw DataError("checkpoint: cannot open " + (dir / "weights.bin").string());
  const std::string weights((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());
  Checkpoint ckpt;
  std::string line;
  if (!std::getline(mf, line) || line != "fitv2-checkpoint") throw DataError("checkpoint: bad manifest header");
  bool version_seen = false;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format_version") {
      int v = 0;
      ls >> v;
      if (v != kCheckpointFormatVersion) throw DataError("checkpoint: unsupported format_version " + std::to_string(v));
      version_seen = true;
    } else if (key.rfind("config.", 0) == 0) {
      std::string value;
      ls >> value;
      set_config_field(ckpt.config, key.substr(7), value);
    } else if (key.rfind("meta.", 0) == 0) {
      std::string value;
      std::getline(ls >> std::ws, value);
      ckpt.meta[key.substr(5)] = value;
    } else if (key == "tensor") {
      StoredTensor t;
      std::string dtype, shape, crc;
      std::size_t offset = 0;
      if (!(ls >> t.name >> dtype >> shape >> offset >> crc)) throw DataError("checkpoint: malformed line: " + line);
      if (dtype != "float32") throw DataError("checkpoint: unsupported dtype " + dtype + " for " + t.name);
      t.shape = detail::parse_shape_text(shape);
      const std::size_t bytes = shape_numel(t.shape) * 4;
      if (offset + bytes > weights.size()) throw DataError("checkpoint: tensor " + t.name + " extends past weights.bin");
      char hex[9];
      std::snprintf(hex, sizeof hex, "%08x", crc32_of(std::span<const char>(weights.data() + offset, bytes)));
      if (crc != hex) throw DataError("checkpoint: checksum mismatch for " + t.name);
      t.values.resize(shape_numel(t.shape));
      for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = detail::read_f32_le(weights.data() + offset + 4 * i);
      ckpt.tensors.push_back(std::move(t));
    } else {
      throw DataError("checkpoint: unknown manifest entry '" + key + "'");
    }
  }
  if (!version_seen) throw DataError("checkpoint: missing format_version");
  ckpt.config.validate();
  return ckpt;
}

template <typename T>
void append_tensors(Checkpoint& ckpt, const ParameterStore<T>& store, const std::string& prefix = "") {
  for (const auto& item : store.items()) {
    ckpt.tensors.push_back({prefix + item.name, item.tensor.shape(),
                            std::vector<float>(item.tensor.data().begin(), item.tensor.data().end())});
  }
}

// Copies tensors named prefix + parameter name into the store.
template <typename T>
void restore_tensors(const Checkpoint& ckpt, ParameterStore<T>& store, const std::string& prefix = "") {
  for (auto& item : store.items()) {
    const auto* t = ckpt.find(prefix + item.name);
    if (!t) throw DataError("checkpoint: missing tensor " + prefix + item.name);
    if (t->shape != item.tensor.shape()) {
      throw DataError("checkpoint: tensor " + t->name + " has shape " + shape_string(t->shape) + ", model expects " +
                      shape_string(item.tensor.shape()));
    }
    auto dst = item.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->values[i]);
  }
}

}  // namespace fitv2
