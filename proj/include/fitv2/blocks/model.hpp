// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// The FiTv2 denoiser: patch embedding, timestep/class conditioning, N blocks
// of masked QK-Norm attention with 2-D RoPE and SwiGLU, each modulated by a
// shared global AdaLN plus a per-block AdaLN-LoRA, and a modulated output head.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fitv2/blocks/accounting.hpp"
#include "fitv2/blocks/config.hpp"
#include "fitv2/blocks/tokens.hpp"
#include "fitv2/numerics.hpp"
#include "fitv2/positional/rope.hpp"

namespace fitv2 {

// Sinusoidal features of t * 1000: [cos(f_i t), sin(f_i t)], f_i = 10000^(-i/128).
template <typename T>
Tensor<T> timestep_features(std::span<const double> t) {
  const std::size_t half = kTimestepFrequencies / 2;
  std::vector<T> out(t.size() * kTimestepFrequencies);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
      const double a = 1000.0 * t[b] * f;
      out[b * kTimestepFrequencies + i] = static_cast<T>(std::cos(a));
      out[b * kTimestepFrequencies + half + i] = static_cast<T>(std::sin(a));
    }
  }
  return Tensor<T>({t.size(), static_cast<std::size_t>(kTimestepFrequencies)}, std::move(out));
}

// x * (1 + scale) + shift with shift/scale [B, 1, d] broadcast over tokens.
template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale) {
  return add(mul(x, add_scalar(scale, T(1))), shift);
}

template <typename T>
Tensor<T> swiglu(const Tensor<T>& x, const Tensor<T>& gate_w, const Tensor<T>& gate_b, const Tensor<T>& up_w,
                 const Tensor<T>& up_b, const Tensor<T>& down_w, const Tensor<T>& down_b) {
  return linear(mul(silu(linear(x, gate_w, gate_b)), linear(x, up_w, up_b)), down_w, down_b);
}

// cos/sin tables [B, L, head_dim/2] for the positions of a batch.
template <typename T>
struct RotaryCache {
  std::shared_ptr<const std::vector<T>> cos;
  std::shared_ptr<const std::vector<T>> sin;
};

template <typename T>
RotaryCache<T> rotary_cache(std::span<const GridPos> positions, const RopeTable& table) {
  const std::size_t P = table.pairs();
  auto c = std::make_shared<std::vector<T>>(positions.size() * P);
  auto s = std::make_shared<std::vector<T>>(positions.size() * P);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    table.rotation<T>(positions[i].h, positions[i].w, std::span<T>(c->data() + i * P, P),
                      std::span<T>(s->data() + i * P, P));
  }
  return {std::move(c), std::move(s)};
}

template <typename T>
struct AttentionWeights {
  Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
};

struct AttentionScales {
  double logit_scale = 1.0;  // attention scale s_attn
  double magnitude = 1.0;    // YaRN factor applied to both q and k
};

// x[B, L, d] -> [B, L, d]. Pads are excluded as keys only.
template <typename T>
Tensor<T> masked_attention(const Tensor<T>& x, const AttentionWeights<T>& w, std::size_t heads,
                           const RotaryCache<T>& rope, std::shared_ptr<const std::vector<T>> key_mask,
                           AttentionScales scales) {
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2), dk = d / heads;
  auto split_heads = [&](const Tensor<T>& t) { return swap_dims_1_2(t.reshape({B, L, heads, dk})); };
  auto q = rotary(layernorm(split_heads(linear(x, w.q_w, w.q_b))), rope.cos, rope.sin);
  auto k = rotary(layernorm(split_heads(linear(x, w.k_w, w.k_b))), rope.cos, rope.sin);
  auto v = split_heads(linear(x, w.v_w, w.v_b));
  const double factor = scales.logit_scale * scales.magnitude * scales.magnitude / std::sqrt(double(dk));
  auto logits = add_key_mask(scale(matmul(q, k, true), static_cast<T>(factor)), std::move(key_mask));
  auto mixed = matmul(softmax_lastdim(logits), v);
  return linear(swap_dims_1_2(mixed).reshape({B, L, d}), w.o_w, w.o_b);
}

// Per-sample conditioning inputs.
struct Conditioning {
  std::vector<double> t;
  std::vector<int> labels;  // null class id for unconditional rows
};

struct ParameterSpec {
  std::string name;
  Shape shape;
};

// Names and shapes of every parameter in allocation order, without
// allocating storage.
inline std::vector<ParameterSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.hidden, h = cfg.mlp_hidden(), r = cfg.rank(), tok = cfg.token_dim();
  std::vector<ParameterSpec> out;
  auto linear_spec = [&](const std::string& name, std::size_t in, std::size_t o) {
    out.push_back({name + ".weight", {in, o}});
    out.push_back({name + ".bias", {o}});
  };
  linear_spec("x_embedder", tok, d);
  linear_spec("t_embedder.fc1", kTimestepFrequencies, d);
  linear_spec("t_embedder.fc2", d, d);
  out.push_back({"y_embedder.table", {static_cast<std::size_t>(cfg.num_classes) + 1, d}});
  linear_spec("global_adaln", d, 6 * d);
  for (int i = 0; i < cfg.layers; ++i) {
    const auto pre = "blocks." + std::to_string(i) + ".";
    for (const char* n : {"q", "k", "v", "o"}) linear_spec(pre + "attn." + n, d, d);
    linear_spec(pre + "mlp.gate", d, h);
    linear_spec(pre + "mlp.up", d, h);
    linear_spec(pre + "mlp.down", h, d);
    linear_spec(pre + "adaln_lora.down", d, r);
    linear_spec(pre + "adaln_lora.up", r, 6 * d);
  }
  linear_spec("final.adaln", d, 2 * d);
  linear_spec("final.linear", d, tok);
  return out;
}

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    allocate(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  Tensor<T>& param(const std::string& name) { return params_.get(name); }

  RopeConfig rope_config(RopeMethod method = RopeMethod::none) const {
    RopeConfig r;
    r.head_dim = cfg_.head_dim();
    r.base = cfg_.rope_base;
    r.method = method;
    r.train_len = cfg_.train_len();
    return r;
  }

  // c + t embedding, [B, d].
  Tensor<T> condition(const Conditioning& cond) {
    if (cond.t.size() != cond.labels.size()) throw ShapeError("condition: t and labels differ in length");
    for (int y : cond.labels) {
      if (y < 0 || y > cfg_.num_classes) throw DataError("label " + std::to_string(y) + " out of range");
    }
    auto h = silu(linear(timestep_features<T>(cond.t), p("t_embedder.fc1.weight"), p("t_embedder.fc1.bias")));
    auto t_emb = linear(h, p("t_embedder.fc2.weight"), p("t_embedder.fc2.bias"));
    return add(t_emb, embedding(p("y_embedder.table"), std::span<const int>(cond.labels)));
  }

  // Modulation for block i: global AdaLN plus the block's low-rank term, [B, 6d].
  Tensor<T> block_modulation(std::size_t i, const Tensor<T>& c_act, const Tensor<T>& global) {
    const auto pre = "blocks." + std::to_string(i) + ".adaln_lora.";
    auto low = linear(linear(c_act, p(pre + "down.weight"), p(pre + "down.bias")), p(pre + "up.weight"),
                      p(pre + "up.bias"));
    return add(global, low);
  }

  // Predicted velocity [B, L_max, p^2 C]; pad rows carry no meaning. Items
  // longer than the training budget need `over_budget` (extrapolation).
  Tensor<T> forward(const TokenBatch<T>& batch, const Conditioning& cond, const RopeTable& rope,
                    bool over_budget = false) {
    const std::size_t B = batch.batch(), d = cfg_.hidden;
    for (std::size_t b = 0; b < B; ++b) {
      if (!over_budget && batch.lengths[b] > cfg_.max_tokens) {
        throw DataError("forward: item " + std::to_string(b) + " has " + std::to_string(batch.lengths[b]) +
                        " tokens, budget is " + std::to_string(cfg_.max_tokens));
      }
    }
    if (batch.token_dim() != static_cast<std::size_t>(cfg_.token_dim())) {
      throw ShapeError("forward: token dim " + std::to_string(batch.token_dim()) + ", model expects " +
                       std::to_string(cfg_.token_dim()));
    }
    if (cond.t.size() != B) throw ShapeError("forward: conditioning batch differs from token batch");
    if (rope.pairs() * 2 != static_cast<std::size_t>(cfg_.head_dim())) {
      throw ConfigError("forward: rope table head_dim does not match the model");
    }
    auto x = linear(batch.tokens, p("x_embedder.weight"), p("x_embedder.bias"));
    auto c_act = silu(condition(cond));
    auto global = linear(c_act, p("global_adaln.weight"), p("global_adaln.bias"));
    const auto cache = rotary_cache<T>(batch.positions, rope);
    const AttentionScales scales{rope.attention_scale(), rope.magnitude()};
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg_.layers); ++i) {
      auto mods = split_lastdim(block_modulation(i, c_act, global), 6);
      for (auto& m : mods) m = m.reshape({B, 1, d});
      // (beta1, beta2, gamma1, gamma2, alpha1, alpha2)
      const auto pre = "blocks." + std::to_string(i) + ".";
      auto attn = masked_attention(modulate(layernorm(x), mods[0], mods[2]), attention_weights(pre), cfg_.heads, cache,
                                   batch.mask, scales);
      x = add(x, mul(attn, mods[4]));
      auto mlp = swiglu(modulate(layernorm(x), mods[1], mods[3]), p(pre + "mlp.gate.weight"), p(pre + "mlp.gate.bias"),
                        p(pre + "mlp.up.weight"), p(pre + "mlp.up.bias"), p(pre + "mlp.down.weight"),
                        p(pre + "mlp.down.bias"));
      x = add(x, mul(mlp, mods[5]));
    }
    auto fin = split_lastdim(linear(c_act, p("final.adaln.weight"), p("final.adaln.bias")), 2);
    auto h = modulate(layernorm(x), fin[0].reshape({B, 1, d}), fin[1].reshape({B, 1, d}));
    return linear(h, p("final.linear.weight"), p("final.linear.bias"));
  }

  AttentionWeights<T> attention_weights(const std::string& prefix) {
    const auto a = prefix + "attn.";
    return {p(a + "q.weight"), p(a + "q.bias"), p(a + "k.weight"), p(a + "k.bias"),
            p(a + "v.weight"), p(a + "v.bias"), p(a + "o.weight"), p(a + "o.bias")};
  }

  // Copy with parameters converted to another scalar type.
  template <typename U>
  Model<U> converted() const {
    Model<U> out(cfg_, 0);
    for (auto& item : out.params().items()) {
      auto src = params_.items()[index_of(item.name)].tensor.data();
      auto dst = item.tensor.mutable_data();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    }
    return out;
  }

  // Copies parameter values from another model of identical configuration.
  void load_values(const Model& other) {
    if (!(other.cfg_ == cfg_)) throw ContractError("load_values: configuration mismatch");
    auto src = other.params_.items();
    auto dst = params_.items();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
    }
  }

 private:
  Tensor<T>& p(const std::string& name) { return params_.get(name); }

  std::size_t index_of(const std::string& name) const {
    auto items = params_.items();
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].name == name) return i;
    throw ContractError("no parameter " + name);
  }

  // Truncated normal at two standard deviations.
  static Tensor<T> normal(Shape shape, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) {
      double z;
      do z = dist(rng);
      while (std::abs(z) > 2.0);
      x = static_cast<T>(z * std);
    }
    return Tensor<T>(std::move(shape), std::move(v));
  }

  void add_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng, bool zero) {
    params_.add(name + ".weight", zero ? Tensor<T>::zeros({in, out}) : normal({in, out}, 1.0 / std::sqrt(double(in)), rng));
    params_.add(name + ".bias", Tensor<T>::zeros({out}));
  }

  void allocate(std::mt19937_64& rng) {
    const std::size_t d = cfg_.hidden, h = cfg_.mlp_hidden(), r = cfg_.rank(), tok = cfg_.token_dim();
    add_linear("x_embedder", tok, d, rng, false);
    params_.add("t_embedder.fc1.weight", normal({kTimestepFrequencies, d}, 0.02, rng));
    params_.add("t_embedder.fc1.bias", Tensor<T>::zeros({d}));
    params_.add("t_embedder.fc2.weight", normal({d, d}, 0.02, rng));
    params_.add("t_embedder.fc2.bias", Tensor<T>::zeros({d}));
    params_.add("y_embedder.table", normal({static_cast<std::size_t>(cfg_.num_classes) + 1, d}, 0.02, rng));
    add_linear("global_adaln", d, 6 * d, rng, true);
    for (int i = 0; i < cfg_.layers; ++i) {
      const auto pre = "blocks." + std::to_string(i) + ".";
      for (const char* n : {"q", "k", "v", "o"}) add_linear(pre + "attn." + n, d, d, rng, false);
      add_linear(pre + "mlp.gate", d, h, rng, false);
      add_linear(pre + "mlp.up", d, h, rng, false);
      add_linear(pre + "mlp.down", h, d, rng, false);
      add_linear(pre + "adaln_lora.down", d, r, rng, false);
      add_linear(pre + "adaln_lora.up", r, 6 * d, rng, true);
    }
    add_linear("final.adaln", d, 2 * d, rng, true);
    add_linear("final.linear", d, tok, rng, true);
  }

  ModelConfig cfg_;
  ParameterStore<T> params_;
};

}  // namespace fitv2
