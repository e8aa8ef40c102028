// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fitv2/errors.hpp"
#include "fitv2/numerics/tensor.hpp"

namespace fitv2 {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Ordered parameter collection; insertion order is the serialization order.
template <typename T>
class ParameterStore {
 public:
  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    for (const auto& p : items_) {
      if (p.name == name) throw ContractError("duplicate parameter name " + name);
    }
    tensor.set_requires_grad(true);
    items_.push_back({std::move(name), std::move(tensor)});
    return items_.back().tensor;
  }

  const Tensor<T>& get(const std::string& name) const { return items_.at(index_of(name)).tensor; }
  Tensor<T>& get(const std::string& name) { return items_.at(index_of(name)).tensor; }
  bool contains(const std::string& name) const { return find(name) != items_.size(); }

  std::span<NamedTensor<T>> items() { return items_; }
  std::span<const NamedTensor<T>> items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

 private:
  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (items_[i].name == name) return i;
    }
    return items_.size();
  }
  std::size_t index_of(const std::string& name) const {
    const auto i = find(name);
    if (i == items_.size()) throw ContractError("unknown parameter " + name);
    return i;
  }

  std::vector<NamedTensor<T>> items_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  long step = 0;

  void ensure(std::span<const NamedTensor<T>> params) {
    if (m.size() == params.size()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (m[i].size() != params[i].tensor.numel()) {
          throw ShapeError("optimizer state for " + params[i].name + " does not match parameter shape");
        }
      }
      return;
    }
    if (!m.empty()) throw ShapeError("optimizer state covers a different parameter set");
    for (const auto& p : params) {
      m.emplace_back(p.tensor.numel(), T{0});
      v.emplace_back(p.tensor.numel(), T{0});
    }
  }
};

// One AdamW update. Parameters with requires_grad == false are left untouched;
// trainable parameters that received no gradient are stepped with g = 0.
// Weight decay is decoupled and applied before the adaptive update.
template <typename T>
void adamw_step(std::span<NamedTensor<T>> params, AdamWState<T>& state, const AdamWConfig& cfg) {
  state.ensure(params);
  for (const auto& p : params) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    for (auto g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].tensor;
    if (!p.requires_grad()) continue;
    auto w = p.mutable_data();
    const bool has = p.has_grad();
    auto g = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      double wi = static_cast<double>(w[i]);
      wi -= cfg.lr * cfg.weight_decay * wi;
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      wi -= cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      w[i] = static_cast<T>(wi);
    }
  }
}

// shadow <- decay * shadow + (1 - decay) * live, written as an increment so a
// shadow that already equals live stays bit-identical.
template <typename T>
void ema_update(std::span<T> shadow, std::span<const T> live, double decay) {
  if (shadow.size() != live.size()) {
    throw ShapeError("ema_update size mismatch: " + std::to_string(shadow.size()) + " vs " +
                     std::to_string(live.size()));
  }
  if (!(decay >= 0.0 && decay < 1.0)) throw ContractError("ema decay must lie in [0, 1)");
  const double rate = 1.0 - decay;
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    shadow[i] = static_cast<T>(shadow[i] + rate * (static_cast<double>(live[i]) - shadow[i]));
  }
}

}  // namespace fitv2
