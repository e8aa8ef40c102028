// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Training loop: AdamW with linear warm-up, EMA shadow weights and class
// dropout for guidance. Each step draws its randomness from a generator seeded
// by (seed, step), so a resumed run replays the uninterrupted one.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fitv2/blocks/checkpoint.hpp"
#include "fitv2/blocks/model.hpp"
#include "fitv2/flow/objective.hpp"
#include "fitv2/pipeline/batch.hpp"

namespace fitv2 {

struct TrainConfig {
  long steps = 2000;
  int batch_size = 16;
  double lr = 1e-4;
  long warmup = 0;
  double ema_decay = 0.9999;
  double class_drop = 0.1;
  TimestepSampler sampler;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  int token_budget = 0;  // packing budget; 0 uses the model's max_tokens

  void validate() const {
    if (steps < 0) throw ConfigError("train.steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (warmup < 0) throw ConfigError("train.warmup must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train.ema must lie in [0, 1)");
    if (!(class_drop >= 0.0 && class_drop <= 1.0)) throw ConfigError("train.class_drop must lie in [0, 1]");
    if (token_budget < 0) throw ConfigError("train.token_budget must be >= 0");
    sampler.validate();
  }

  // Linear warm-up over the first `warmup` steps, then constant.
  double lr_at(long step) const {
    if (warmup <= 0) return lr;
    return lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup));
  }
};

struct LossRecord {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

template <typename T>
struct TrainState {
  Model<T> model;
  Model<T> ema;
  AdamWState<T> opt;
  long step = 0;

  TrainState(const ModelConfig& cfg, std::uint64_t seed) : model(cfg, seed), ema(cfg, seed) {}
};

inline std::mt19937_64 step_rng(std::uint64_t seed, long step, std::uint32_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32),
                    stream};
  return std::mt19937_64(seq);
}

// Rope table covering every token grid of a dataset at the model's training
// positions (no interpolation).
template <typename T>
RopeTable training_rope(const Model<T>& model, std::span<const ImageSample> data) {
  int gh = 1, gw = 1;
  const int p = model.config().patch;
  for (const auto& s : data) {
    gh = std::max(gh, s.image.height / p);
    gw = std::max(gw, s.image.width / p);
  }
  return RopeTable::build(model.rope_config(RopeMethod::none), gh, gw);
}

// One optimizer step; returns the batch loss before the update.
template <typename T>
double train_step(TrainState<T>& st, std::span<const ImageSample> data, const TrainConfig& cfg, const RopeTable& rope) {
  if (data.empty()) throw DataError("training set is empty");
  auto rng = step_rng(cfg.seed, st.step);
  const auto& mc = st.model.config();
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<const ImageSample*> chosen;
  Conditioning cond;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto* s = &data[pick(rng)];
    chosen.push_back(s);
    cond.labels.push_back(coin(rng) < cfg.class_drop ? mc.null_class() : s->label);
    cond.t.push_back(cfg.sampler(rng));
  }
  const int budget = cfg.token_budget > 0 ? cfg.token_budget : mc.max_tokens;
  auto clean = pack_batch<T>(std::span<const ImageSample* const>(chosen), budget, mc.patch, mc.in_channels);
  auto in = make_flow_inputs<T>(clean, cond.t, rng);
  auto pred = st.model.forward(in.noisy, cond, rope, budget > mc.max_tokens);
  auto loss = masked_mse(pred, in.target, in.noisy.lengths);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite loss at step " + std::to_string(st.step));
  st.model.params().zero_grad();
  backward(loss);
  for (const auto& p : st.model.params().items()) {
    if (!p.tensor.requires_grad() && p.tensor.has_grad()) {
      throw ContractError("gradient reached frozen parameter " + p.name);
    }
  }
  AdamWConfig opt{cfg.lr_at(st.step), cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay};
  adamw_step(st.model.params().items(), st.opt, opt);
  st.model.params().zero_grad();
  auto live = st.model.params().items();
  auto shadow = st.ema.params().items();
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (!live[i].tensor.requires_grad()) continue;
    ema_update(shadow[i].tensor.mutable_data(), live[i].tensor.data(), cfg.ema_decay);
  }
  ++st.step;
  return value;
}

// Runs until st.step == cfg.steps (or `max_new` more steps), calling `on_record`
// after every step. Without `rope_override` the table is the un-interpolated
// one covering the data.
template <typename T>
std::vector<LossRecord> train_loop(TrainState<T>& st, std::span<const ImageSample> data, const TrainConfig& cfg,
                                   long max_new = -1,
                                   const std::function<void(const LossRecord&)>& on_record = {},
                                   const RopeTable* rope_override = nullptr) {
  cfg.validate();
  const auto rope = rope_override ? *rope_override : training_rope(st.model, data);
  std::vector<LossRecord> trace;
  long remaining = max_new < 0 ? cfg.steps - st.step : std::min(max_new, cfg.steps - st.step);
  for (; remaining > 0; --remaining) {
    const double lr = cfg.lr_at(st.step);
    LossRecord r{st.step, train_step(st, data, cfg, rope), lr};
    trace.push_back(r);
    if (on_record) on_record(r);
  }
  return trace;
}

// Held-out loss on a fixed grid of timesteps (midpoints of `t_points` equal
// bins) with noise fixed by `seed`; every sample meets every timestep.
template <typename T>
double evaluate_loss(Model<T>& model, std::span<const ImageSample> data, int t_points, std::uint64_t seed,
                     int batch_size = 16, const RopeTable* rope_override = nullptr, int token_budget = 0) {
  NoGradGuard no_grad;
  const auto rope = rope_override ? *rope_override : training_rope(model, data);
  const int budget = token_budget > 0 ? token_budget : model.config().max_tokens;
  double total = 0.0;
  long count = 0;
  for (int k = 0; k < t_points; ++k) {
    const double t = (k + 0.5) / t_points;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
      const std::size_t end = std::min(data.size(), start + batch_size);
      std::vector<const ImageSample*> chosen;
      Conditioning cond;
      for (std::size_t i = start; i < end; ++i) {
        chosen.push_back(&data[i]);
        cond.labels.push_back(data[i].label);
        cond.t.push_back(t);
      }
      auto rng = step_rng(seed, static_cast<long>(start), static_cast<std::uint32_t>(k));
      const auto& mc = model.config();
      auto clean = pack_batch<T>(std::span<const ImageSample* const>(chosen), budget, mc.patch, mc.in_channels);
      auto in = make_flow_inputs<T>(clean, cond.t, rng);
      auto pred = model.forward(in.noisy, cond, rope, budget > mc.max_tokens);
      total += masked_mse(pred, in.target, in.noisy.lengths).item() * static_cast<double>(end - start);
      count += static_cast<long>(end - start);
    }
  }
  return total / static_cast<double>(count);
}

// Smoothed trace: mean over a trailing window of `window` records.
inline std::vector<double> moving_average(std::span<const LossRecord> trace, std::size_t window) {
  std::vector<double> out;
  double acc = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    acc += trace[i].loss;
    if (i >= window) acc -= trace[i - window].loss;
    if (i + 1 >= window) out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

template <typename T>
Checkpoint to_checkpoint(const TrainState<T>& st) {
  Checkpoint ck;
  ck.config = st.model.config();
  ck.meta["step"] = std::to_string(st.step);
  ck.meta["optimizer_step"] = std::to_string(st.opt.step);
  append_tensors(ck, st.model.params());
  append_tensors(ck, st.ema.params(), "ema/");
  const auto items = st.model.params().items();
  for (std::size_t i = 0; i < st.opt.m.size(); ++i) {
    ck.tensors.push_back({"adam_m/" + items[i].name, items[i].tensor.shape(),
                          std::vector<float>(st.opt.m[i].begin(), st.opt.m[i].end())});
    ck.tensors.push_back({"adam_v/" + items[i].name, items[i].tensor.shape(),
                          std::vector<float>(st.opt.v[i].begin(), st.opt.v[i].end())});
  }
  return ck;
}

// Missing EMA or optimizer tensors fall back to the live weights and a fresh
// optimizer.
template <typename T>
TrainState<T> from_checkpoint(const Checkpoint& ck) {
  TrainState<T> st(ck.config, 0);
  restore_tensors(ck, st.model.params());
  if (ck.find("ema/" + st.model.params().items()[0].name)) restore_tensors(ck, st.ema.params(), "ema/");
  else st.ema.load_values(st.model);
  if (auto it = ck.meta.find("step"); it != ck.meta.end()) st.step = std::stol(it->second);
  const auto items = st.model.params().items();
  if (ck.find("adam_m/" + items[0].name)) {
    for (const auto& p : items) {
      const auto* m = ck.find("adam_m/" + p.name);
      const auto* v = ck.find("adam_v/" + p.name);
      if (!m || !v) throw DataError("checkpoint: incomplete optimizer state for " + p.name);
      st.opt.m.emplace_back(m->values.begin(), m->values.end());
      st.opt.v.emplace_back(v->values.begin(), v->values.end());
    }
    if (auto it = ck.meta.find("optimizer_step"); it != ck.meta.end()) st.opt.step = std::stol(it->second);
  }
  return st;
}

}  // namespace fitv2
