// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Parameter-efficient high-resolution post-training: which tensors stay
// trainable, and a short post-training loop with NTK-shifted rotary bases.

#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fitv2/blocks/model.hpp"
#include "fitv2/errors.hpp"

namespace fitv2 {

enum class ParamRole {
  patch_embedder,
  timestep_embedder,
  label_embedder,
  modulation,  // global AdaLN, per-block AdaLN-LoRA, final AdaLN
  attention,
  mlp,
  output_layer,
};

inline std::string_view to_string(ParamRole r) {
  switch (r) {
    case ParamRole::patch_embedder: return "patch_embedder";
    case ParamRole::timestep_embedder: return "timestep_embedder";
    case ParamRole::label_embedder: return "label_embedder";
    case ParamRole::modulation: return "modulation";
    case ParamRole::attention: return "attention";
    case ParamRole::mlp: return "mlp";
    case ParamRole::output_layer: return "output_layer";
  }
  return "?";
}

inline bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
inline bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

inline ParamRole classify_parameter(std::string_view name) {
  if (starts_with(name, "x_embedder.")) return ParamRole::patch_embedder;
  if (starts_with(name, "t_embedder.")) return ParamRole::timestep_embedder;
  if (name == "y_embedder.table") return ParamRole::label_embedder;
  if (starts_with(name, "global_adaln.") || starts_with(name, "final.adaln.")) return ParamRole::modulation;
  if (starts_with(name, "final.linear.")) return ParamRole::output_layer;
  if (starts_with(name, "blocks.")) {
    const auto rest = name.substr(name.find('.', 7) + 1);
    if (starts_with(rest, "attn.")) return ParamRole::attention;
    if (starts_with(rest, "mlp.")) return ParamRole::mlp;
    if (starts_with(rest, "adaln_lora.")) return ParamRole::modulation;
  }
  throw ContractError("freeze plan: no role for parameter '" + std::string(name) + "'");
}

// Biases, every AdaLN modulation tensor, the patch embedder and the output
// layer train; everything else is frozen.
inline bool trainable_under_plan(std::string_view name) {
  const auto role = classify_parameter(name);
  if (ends_with(name, ".bias")) return true;
  return role == ParamRole::modulation || role == ParamRole::patch_embedder || role == ParamRole::output_layer;
}

struct FreezeEntry {
  std::string name;
  ParamRole role;
  std::int64_t count = 0;
  bool trainable = false;
};

struct FreezePlan {
  std::vector<FreezeEntry> entries;
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;

  double fraction() const { return static_cast<double>(trainable) / static_cast<double>(trainable + frozen); }

  bool is_trainable(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return e.trainable;
    }
    throw ContractError("freeze plan has no entry for '" + name + "'");
  }

  template <typename T>
  void apply(Model<T>& model) const {
    for (auto& p : model.params().items()) p.tensor.set_requires_grad(is_trainable(p.name));
  }

  std::string report() const {
    std::ostringstream o;
    o << "trainable " << trainable << "\n"
      << "frozen " << frozen << "\n"
      << "total " << trainable + frozen << "\n"
      << "fraction " << std::setprecision(6) << std::fixed << fraction() << "\n";
    for (const auto& e : entries) {
      o << (e.trainable ? "train  " : "freeze ") << e.name << " " << to_string(e.role) << " " << e.count << "\n";
    }
    return o.str();
  }
};

template <typename Named>
FreezePlan build_freeze_plan_from(const std::vector<Named>& items) {
  FreezePlan plan;
  for (const auto& it : items) {
    FreezeEntry e{it.name, classify_parameter(it.name), static_cast<std::int64_t>(shape_numel(it.shape)),
                  trainable_under_plan(it.name)};
    (e.trainable ? plan.trainable : plan.frozen) += e.count;
    plan.entries.push_back(std::move(e));
  }
  return plan;
}

inline FreezePlan build_freeze_plan(const ModelConfig& cfg) { return build_freeze_plan_from(parameter_layout(cfg)); }

template <typename T>
FreezePlan build_freeze_plan(const Model<T>& model) {
  std::vector<ParameterSpec> items;
  for (const auto& p : model.params().items()) items.push_back({p.name, p.tensor.shape()});
  return build_freeze_plan_from(items);
}

// Every tensor trainable; post-training with it is ordinary training.
template <typename T>
FreezePlan all_trainable_plan(const Model<T>& model) {
  auto plan = build_freeze_plan(model);
  for (auto& e : plan.entries) e.trainable = true;
  plan.trainable += plan.frozen;
  plan.frozen = 0;
  return plan;
}

}  // namespace fitv2
