// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

// Fixed-step Euler and RK4, and adaptive Dormand-Prince 5(4) with PI step
// control, on a flat double state.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fitv2/errors.hpp"

namespace fitv2 {

enum class OdeMethod { euler, rk4, adaptive };

inline std::string_view to_string(OdeMethod m) {
  switch (m) {
    case OdeMethod::euler: return "euler";
    case OdeMethod::rk4: return "rk4";
    case OdeMethod::adaptive: return "adaptive";
  }
  return "?";
}

inline OdeMethod parse_ode_method(std::string_view s) {
  if (s == "euler") return OdeMethod::euler;
  if (s == "rk4") return OdeMethod::rk4;
  if (s == "adaptive" || s == "dopri5") return OdeMethod::adaptive;
  throw ConfigError("unknown ode method '" + std::string(s) + "'");
}

struct OdeConfig {
  OdeMethod method = OdeMethod::adaptive;
  int steps = 50;  // fixed-step methods
  double rtol = 1e-5;
  double atol = 1e-5;
  double t0 = 0.0;
  double t1 = 1.0;
  double min_step = 1e-8;
  long max_steps = 1000000;

  void validate() const {
    if (steps < 1) throw ConfigError("ode steps must be >= 1");
    if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("ode rtol and atol must be positive");
    if (!(t1 > t0)) throw ConfigError("ode needs t1 > t0");
  }
};

// out = v(t, z)
using VelocityField = std::function<void(double t, std::span<const double> z, std::span<double> out)>;

struct OdeStats {
  long evaluations = 0;
  long accepted = 0;
  long rejected = 0;
};

namespace detail {

inline void axpy_into(std::span<double> out, std::span<const double> z, double h,
                      std::initializer_list<std::pair<double, const std::vector<double>*>> terms) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (const auto& [c, k] : terms) acc += c * (*k)[i];
    out[i] = z[i] + h * acc;
  }
}

inline OdeStats euler(const VelocityField& f, std::vector<double>& z, const OdeConfig& cfg) {
  OdeStats st;
  const double dt = (cfg.t1 - cfg.t0) / cfg.steps;
  std::vector<double> v(z.size());
  for (int k = 0; k < cfg.steps; ++k) {
    f(cfg.t0 + k * dt, z, v);
    ++st.evaluations;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += dt * v[i];
    ++st.accepted;
  }
  return st;
}

inline OdeStats rk4(const VelocityField& f, std::vector<double>& z, const OdeConfig& cfg) {
  OdeStats st;
  const double h = (cfg.t1 - cfg.t0) / cfg.steps;
  const std::size_t n = z.size();
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (int s = 0; s < cfg.steps; ++s) {
    const double t = cfg.t0 + s * h;
    f(t, z, k1);
    axpy_into(tmp, z, h, {{0.5, &k1}});
    f(t + 0.5 * h, tmp, k2);
    axpy_into(tmp, z, h, {{0.5, &k2}});
    f(t + 0.5 * h, tmp, k3);
    axpy_into(tmp, z, h, {{1.0, &k3}});
    f(t + h, tmp, k4);
    st.evaluations += 4;
    for (std::size_t i = 0; i < n; ++i) z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    ++st.accepted;
  }
  return st;
}

inline OdeStats dopri5(const VelocityField& f, std::vector<double>& z, const OdeConfig& cfg) {
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // Difference between the 5th- and embedded 4th-order weights.
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;
  constexpr double safety = 0.9, min_factor = 0.2, max_factor = 10.0;
  constexpr double alpha = 0.7 / 5.0, beta = 0.4 / 5.0;

  OdeStats st;
  const std::size_t n = z.size();
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), znew(n);
  auto error_norm = [&](std::span<const double> err, std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sc = cfg.atol + cfg.rtol * std::max(std::abs(a[i]), std::abs(b[i]));
      s += (err[i] / sc) * (err[i] / sc);
    }
    return std::sqrt(s / static_cast<double>(std::max<std::size_t>(n, 1)));
  };

  double t = cfg.t0;
  f(t, z, k1);
  ++st.evaluations;

  // Initial step from the size of the state and its derivative.
  double h;
  {
    double d0 = 0, d1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sc = cfg.atol + cfg.rtol * std::abs(z[i]);
      d0 += (z[i] / sc) * (z[i] / sc);
      d1 += (k1[i] / sc) * (k1[i] / sc);
    }
    d0 = std::sqrt(d0 / std::max<std::size_t>(n, 1));
    d1 = std::sqrt(d1 / std::max<std::size_t>(n, 1));
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::min(h, cfg.t1 - cfg.t0);
  }

  double prev_err = 1e-4;
  while (t < cfg.t1) {
    if (st.accepted + st.rejected >= cfg.max_steps) throw NumericError("adaptive ODE: step budget exhausted");
    if (h < cfg.min_step) {
      throw NumericError("adaptive ODE: step size " + std::to_string(h) + " underflow at t=" + std::to_string(t));
    }
    const bool last = t + h >= cfg.t1;
    if (last) h = cfg.t1 - t;
    axpy_into(tmp, z, h, {{a21, &k1}});
    f(t + c2 * h, tmp, k2);
    axpy_into(tmp, z, h, {{a31, &k1}, {a32, &k2}});
    f(t + c3 * h, tmp, k3);
    axpy_into(tmp, z, h, {{a41, &k1}, {a42, &k2}, {a43, &k3}});
    f(t + c4 * h, tmp, k4);
    axpy_into(tmp, z, h, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}});
    f(t + c5 * h, tmp, k5);
    axpy_into(tmp, z, h, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}});
    f(t + h, tmp, k6);
    axpy_into(znew, z, h, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}});
    f(t + h, znew, k7);
    st.evaluations += 6;
    for (std::size_t i = 0; i < n; ++i) {
      tmp[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
    }
    const double err = error_norm(tmp, z, znew);
    if (!std::isfinite(err)) throw NumericError("adaptive ODE: non-finite error estimate at t=" + std::to_string(t));
    if (err <= 1.0) {
      t = last ? cfg.t1 : t + h;
      z.swap(znew);
      k1.swap(k7);
      ++st.accepted;
      double factor = err == 0.0 ? max_factor
                                 : safety * std::pow(err, -alpha) * std::pow(prev_err, beta);
      h *= std::clamp(factor, min_factor, max_factor);
      prev_err = std::max(err, 1e-4);
    } else {
      ++st.rejected;
      h *= std::max(min_factor, safety * std::pow(err, -alpha));
    }
  }
  return st;
}

}  // namespace detail

// Integrates dz/dt = v(t, z) from cfg.t0 to cfg.t1 in place.
inline OdeStats integrate(const VelocityField& f, std::vector<double>& z, const OdeConfig& cfg) {
  cfg.validate();
  switch (cfg.method) {
    case OdeMethod::euler: return detail::euler(f, z, cfg);
    case OdeMethod::rk4: return detail::rk4(f, z, cfg);
    case OdeMethod::adaptive: return detail::dopri5(f, z, cfg);
  }
  return {};
}

}  // namespace fitv2
