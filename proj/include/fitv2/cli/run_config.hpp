// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: a flat `section.key = value` file checked against a
// fixed schema. Every key has a default; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "fitv2/blocks/config.hpp"
#include "fitv2/errors.hpp"
#include "fitv2/flow/ode.hpp"
#include "fitv2/flow/train.hpp"
#include "fitv2/kv.hpp"
#include "fitv2/pipeline/preprocess.hpp"
#include "fitv2/positional/rope.hpp"

namespace fitv2 {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";

  ModelConfig model;

  RopeMethod rope_method = RopeMethod::none;
  double yarn_alpha = 1.0;
  double yarn_beta = 32.0;
  bool attn_scale = false;  // extrapolation.attn_scale

  OdeConfig ode;
  double cfg_scale = 1.5;

  TrainConfig train;
  long checkpoint_every = 500;

  std::string data_dir = "data";
  PreprocessMode preprocess_mode = PreprocessMode::mixed;
  int target_size = 16;
  double crop_probability = 0.5;

  int sample_height = 16;
  int sample_width = 16;
  int sample_count = 8;
  int sample_class = -1;  // -1 cycles through the classes
  bool sample_ema = true;
  bool sample_ppm = false;

  std::string eval_resolutions = "16x16";
  int eval_samples_per_class = 16;
  int eval_t_points = 8;
  int eval_downsample = 4;
  int eval_max_samples = 256;  // dataset records used as references

  RunConfig() {
    ode.method = OdeMethod::euler;
    ode.steps = 20;
  }

  PreprocessPolicy preprocess_policy(int max_tokens) const {
    PreprocessPolicy p;
    p.mode = preprocess_mode;
    p.target_size = target_size;
    p.max_tokens = max_tokens;
    p.patch = model.patch;
    p.crop_probability = crop_probability;
    return p;
  }

  void validate() const {
    model.validate();
    train.validate();
    ode.validate();
    if (!(yarn_alpha < yarn_beta)) throw ConfigError("rope.yarn_alpha must be smaller than rope.yarn_beta");
    if (!(cfg_scale >= 1.0)) throw ConfigError("flow.cfg must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
    if (!(crop_probability >= 0.0 && crop_probability <= 1.0)) throw ConfigError("data.crop_probability must lie in [0, 1]");
    preprocess_policy(model.max_tokens).validate();
    if (sample_height < 1 || sample_width < 1 || sample_count < 1) throw ConfigError("sample sizes must be positive");
    if (sample_class < -1 || sample_class >= model.num_classes) {
      throw ConfigError("sample.class must be -1 or a class id below " + std::to_string(model.num_classes));
    }
    if (eval_samples_per_class < 2) throw ConfigError("eval.samples_per_class must be >= 2");
    if (eval_t_points < 1) throw ConfigError("eval.t_points must be >= 1");
    if (eval_downsample < 1) throw ConfigError("eval.downsample must be >= 1");
    if (eval_max_samples < 1) throw ConfigError("eval.max_samples must be >= 1");
  }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool resume_sensitive = false;  // must agree with a checkpoint being resumed
};

template <typename Int>
Int checked_int(const std::string& v, const std::string& key) {
  const long long x = parse_int(v, key);
  bool ok;
  if constexpr (std::is_unsigned_v<Int>) {
    ok = x >= 0;
  } else {
    ok = x >= static_cast<long long>(std::numeric_limits<Int>::min()) &&
         x <= static_cast<long long>(std::numeric_limits<Int>::max());
  }
  if (!ok) throw ConfigError(key + ": " + v + " is out of range");
  return static_cast<Int>(x);
}

#define FITV2_INT_FIELD(KEY, MEMBER, SENS)                                                              \
  ConfigField {                                                                                        \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = checked_int<decltype(c.MEMBER)>(v, KEY); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }, SENS                               \
  }
#define FITV2_DOUBLE_FIELD(KEY, MEMBER, SENS)                                               \
  ConfigField {                                                                            \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_double(v, KEY); },      \
        [](const RunConfig& c) { return format_double(c.MEMBER); }, SENS                    \
  }
#define FITV2_BOOL_FIELD(KEY, MEMBER, SENS)                                               \
  ConfigField {                                                                          \
    KEY, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(v, KEY); },      \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }, SENS \
  }
#define FITV2_STRING_FIELD(KEY, MEMBER, SENS)                                                         \
  ConfigField {                                                                                      \
    KEY,                                                                                             \
        [](RunConfig& c, const std::string& v) {                                                     \
          if (v.empty()) throw ConfigError(std::string(KEY) + ": empty value");                      \
          c.MEMBER = v;                                                                              \
        },                                                                                           \
        [](const RunConfig& c) { return c.MEMBER; }, SENS                                            \
  }

inline const std::vector<ConfigField>& config_schema() {
  static const std::vector<ConfigField> fields = {
      FITV2_INT_FIELD("seed", seed, true),
      FITV2_STRING_FIELD("out", out, false),

      FITV2_INT_FIELD("model.layers", model.layers, true),
      FITV2_INT_FIELD("model.hidden", model.hidden, true),
      FITV2_INT_FIELD("model.heads", model.heads, true),
      FITV2_INT_FIELD("model.patch", model.patch, true),
      FITV2_INT_FIELD("model.lora_rank", model.lora_rank, true),
      FITV2_INT_FIELD("model.in_channels", model.in_channels, true),
      FITV2_INT_FIELD("model.max_tokens", model.max_tokens, true),
      FITV2_INT_FIELD("model.num_classes", model.num_classes, true),

      {"rope.method", [](RunConfig& c, const std::string& v) { c.rope_method = parse_rope_method(v); },
       [](const RunConfig& c) { return std::string(to_string(c.rope_method)); }},
      FITV2_DOUBLE_FIELD("rope.base", model.rope_base, true),
      FITV2_DOUBLE_FIELD("rope.yarn_alpha", yarn_alpha, false),
      FITV2_DOUBLE_FIELD("rope.yarn_beta", yarn_beta, false),
      FITV2_BOOL_FIELD("extrapolation.attn_scale", attn_scale, false),

      {"flow.sampler", [](RunConfig& c, const std::string& v) { c.train.sampler.kind = parse_timestep_kind(v); },
       [](const RunConfig& c) { return std::string(to_string(c.train.sampler.kind)); }, true},
      FITV2_DOUBLE_FIELD("flow.logit_mean", train.sampler.mean, true),
      FITV2_DOUBLE_FIELD("flow.logit_std", train.sampler.std, true),
      {"flow.ode", [](RunConfig& c, const std::string& v) { c.ode.method = parse_ode_method(v); },
       [](const RunConfig& c) { return std::string(to_string(c.ode.method)); }},
      FITV2_INT_FIELD("flow.steps", ode.steps, false),
      FITV2_DOUBLE_FIELD("flow.rtol", ode.rtol, false),
      FITV2_DOUBLE_FIELD("flow.atol", ode.atol, false),
      FITV2_DOUBLE_FIELD("flow.cfg", cfg_scale, false),

      FITV2_INT_FIELD("train.steps", train.steps, false),
      FITV2_INT_FIELD("train.batch_size", train.batch_size, true),
      FITV2_DOUBLE_FIELD("train.lr", train.lr, true),
      FITV2_INT_FIELD("train.warmup", train.warmup, true),
      FITV2_DOUBLE_FIELD("train.ema", train.ema_decay, true),
      FITV2_DOUBLE_FIELD("train.class_drop", train.class_drop, true),
      FITV2_DOUBLE_FIELD("train.weight_decay", train.weight_decay, true),
      FITV2_INT_FIELD("train.checkpoint_every", checkpoint_every, false),

      FITV2_STRING_FIELD("data.dir", data_dir, true),
      {"data.mode", [](RunConfig& c, const std::string& v) { c.preprocess_mode = parse_preprocess_mode(v); },
       [](const RunConfig& c) { return std::string(to_string(c.preprocess_mode)); }, true},
      FITV2_INT_FIELD("data.target_size", target_size, true),
      FITV2_DOUBLE_FIELD("data.crop_probability", crop_probability, true),

      FITV2_INT_FIELD("sample.height", sample_height, false),
      FITV2_INT_FIELD("sample.width", sample_width, false),
      FITV2_INT_FIELD("sample.count", sample_count, false),
      FITV2_INT_FIELD("sample.class", sample_class, false),
      FITV2_BOOL_FIELD("sample.ema", sample_ema, false),
      FITV2_BOOL_FIELD("sample.ppm", sample_ppm, false),

      FITV2_STRING_FIELD("eval.resolutions", eval_resolutions, false),
      FITV2_INT_FIELD("eval.samples_per_class", eval_samples_per_class, false),
      FITV2_INT_FIELD("eval.t_points", eval_t_points, false),
      FITV2_INT_FIELD("eval.downsample", eval_downsample, false),
      FITV2_INT_FIELD("eval.max_samples", eval_max_samples, false),
  };
  return fields;
}

#undef FITV2_INT_FIELD
#undef FITV2_DOUBLE_FIELD
#undef FITV2_BOOL_FIELD
#undef FITV2_STRING_FIELD

inline const ConfigField* find_field(std::string_view key) {
  for (const auto& f : config_schema())
    if (f.key == key) return &f;
  return nullptr;
}

}  // namespace detail

// Sets one key; `where` prefixes error messages.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                             const std::string& where = "") {
  const auto* f = detail::find_field(key);
  const std::string prefix = where.empty() ? "" : where + ": ";
  if (!f) throw ConfigError(prefix + "unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  }
}

inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source) {
  for (const auto& e : parse_kv(text, source)) {
    set_config_value(cfg, e.key, e.value, source + ":" + std::to_string(e.line));
  }
}

inline RunConfig parse_run_config(std::string_view text, const std::string& source) {
  RunConfig cfg;
  apply_config_text(cfg, text, source);
  cfg.validate();
  return cfg;
}

inline std::map<std::string, std::string> config_values(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& f : detail::config_schema()) out[f.key] = f.get(cfg);
  return out;
}

// Every key with its effective value, in schema order.
inline std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_schema()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline bool is_resume_sensitive(const std::string& key) {
  const auto* f = detail::find_field(key);
  return f && f->resume_sensitive;
}

// Rope settings of `cfg` for a model whose positional layout is `model`.
inline RopeConfig rope_config_for(const ModelConfig& model, const RunConfig& cfg, RopeMethod method) {
  RopeConfig r;
  r.head_dim = model.head_dim();
  r.base = model.rope_base;
  r.method = method;
  r.train_len = model.train_len();
  r.yarn_alpha = cfg.yarn_alpha;
  r.yarn_beta = cfg.yarn_beta;
  return r;
}

}  // namespace fitv2
