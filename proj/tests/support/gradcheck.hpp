// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference oracle. Independent of the backward rules it
// checks: it only perturbs leaf buffers and re-runs the forward closure.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fitv2/numerics/tensor.hpp"

namespace fitv2::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "leaf[index]" of the worst entry
};

// Relative error with a floor so that near-zero gradients are compared
// absolutely: |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// `loss` must rebuild the graph from the given leaves on every call.
// `fourth_order` uses the five-point central stencil, which tolerates a
// larger step on strongly curved losses.
inline GradCheckResult gradcheck(std::vector<Tensor<double>>& leaves,
                                 const std::function<Tensor<double>()>& loss, double step = 1e-6,
                                 std::size_t max_entries_per_leaf = 0, bool fourth_order = false) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  backward(loss());
  GradCheckResult result;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto data = leaf.mutable_data();
    std::size_t stride = 1;
    if (max_entries_per_leaf && data.size() > max_entries_per_leaf) stride = data.size() / max_entries_per_leaf;
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double orig = data[i];
      auto at = [&](double x) {
        NoGradGuard guard;
        data[i] = x;
        const double v = loss().item();
        data[i] = orig;
        return v;
      };
      const double d1 = at(orig + step) - at(orig - step);
      const double numeric = fourth_order ? (8 * d1 - (at(orig + 2 * step) - at(orig - 2 * step))) / (12 * step)
                                          : d1 / (2 * step);
      const double err = relative_error(analytic[i], numeric);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = "leaf" + std::to_string(li) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace fitv2::testing
