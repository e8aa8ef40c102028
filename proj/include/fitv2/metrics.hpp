// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Sample-quality statistics used in place of FID at desk scale.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "fitv2/blocks/tokens.hpp"
#include "fitv2/errors.hpp"

namespace fitv2 {

// Points are rows of a row-major [n, dim] buffer.
struct PointSet {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t size() const { return dim ? values.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(values).subspan(i * dim, dim); }
};

namespace detail {

inline double mean_pair_distance(const PointSet& a, const PointSet& b, bool same) {
  double total = 0.0;
  const std::size_t n = a.size(), m = b.size(), d = a.dim;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = a.values.data() + i * d;
    for (std::size_t j = same ? i + 1 : 0; j < m; ++j) {
      const double* y = b.values.data() + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
      total += std::sqrt(s);
    }
  }
  if (same) return n > 1 ? 2.0 * total / (static_cast<double>(n) * (n - 1)) : 0.0;
  return total / (static_cast<double>(n) * m);
}

}  // namespace detail

// 2 E|X - Y| - E|X - X'| - E|Y - Y'| with unbiased within-set terms.
inline double energy_distance(const PointSet& x, const PointSet& y) {
  if (x.dim != y.dim || x.size() == 0 || y.size() == 0) throw ShapeError("energy_distance: incompatible point sets");
  return 2.0 * detail::mean_pair_distance(x, y, false) - detail::mean_pair_distance(x, x, true) -
         detail::mean_pair_distance(y, y, true);
}

// Mean vector and covariance of per-pixel channel vectors pooled over images.
struct ChannelStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  long count = 0;
};

inline ChannelStats channel_stats(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("channel_stats: no images");
  const int C = images.front().channels;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(C);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(C, C);
  long n = 0;
  Eigen::VectorXd v(C);
  for (const auto& img : images) {
    if (img.channels != C) throw ShapeError("channel_stats: channel count differs between images");
    for (int h = 0; h < img.height; ++h)
      for (int w = 0; w < img.width; ++w) {
        for (int c = 0; c < C; ++c) v[c] = img.at(c, h, w);
        sum += v;
        outer += v * v.transpose();
        ++n;
      }
  }
  ChannelStats s;
  s.count = n;
  s.mean = sum / static_cast<double>(n);
  s.cov = outer / static_cast<double>(n) - s.mean * s.mean.transpose();
  return s;
}

// |mu_a - mu_b|^2 + |Sigma_a - Sigma_b|_F
inline double stats_distance(const ChannelStats& a, const ChannelStats& b) {
  return (a.mean - b.mean).squaredNorm() + (a.cov - b.cov).norm();
}

// Images pooled down to factor x factor blocks and flattened, one point each.
inline PointSet downsample_points(std::span<const Image> images, int out_h, int out_w) {
  PointSet ps;
  if (images.empty()) return ps;
  const int C = images.front().channels;
  ps.dim = static_cast<std::size_t>(C) * out_h * out_w;
  for (const auto& img : images) {
    if (img.channels != C) throw ShapeError("downsample_points: channel count differs between images");
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) {
          const int h0 = i * img.height / out_h, h1 = std::max(h0 + 1, (i + 1) * img.height / out_h);
          const int w0 = j * img.width / out_w, w1 = std::max(w0 + 1, (j + 1) * img.width / out_w);
          double s = 0.0;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) s += img.at(c, h, w);
          ps.values.push_back(s / ((h1 - h0) * (w1 - w0)));
        }
  }
  return ps;
}

}  // namespace fitv2
