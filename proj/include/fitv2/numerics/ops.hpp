// Copyright 2026 The fitv2 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fitv2/errors.hpp"
#include "fitv2/numerics/tensor.hpp"

namespace fitv2 {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c (+)= op(a) * op(b) where a is stored a_rows x a_cols and b is b_rows x b_cols.
template <typename T>
void gemm(const T* a, std::size_t a_rows, std::size_t a_cols, bool trans_a, const T* b,
          std::size_t b_rows, std::size_t b_cols, bool trans_b, T* c, bool accumulate) {
  using Map = Eigen::Map<const RowMatrix<T>>;
  const Map A(a, static_cast<Eigen::Index>(a_rows), static_cast<Eigen::Index>(a_cols));
  const Map B(b, static_cast<Eigen::Index>(b_rows), static_cast<Eigen::Index>(b_cols));
  const auto m = trans_a ? a_cols : a_rows;
  const auto n = trans_b ? b_rows : b_cols;
  Eigen::Map<RowMatrix<T>> C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) {
    C.noalias() += A * B;
  } else if (!trans_a && trans_b) {
    C.noalias() += A * B.transpose();
  } else if (trans_a && !trans_b) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

// Calls fn(index_in_a, index_in_b) for every element of `a_shape`, where
// `b_shape` is broadcast into `a_shape` (numpy rules, b may have lower rank).
template <typename Fn>
void for_each_broadcast(const Shape& a_shape, const Shape& b_shape, Fn&& fn) {
  const std::size_t rank = a_shape.size();
  const std::size_t offset = rank - b_shape.size();
  std::vector<std::size_t> b_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = b_shape.size(); i-- > 0;) {
    if (b_shape[i] != 1) b_stride[i + offset] = stride;
    stride *= b_shape[i];
  }
  // Collapse the innermost dimension for a tight loop.
  const std::size_t inner = rank ? a_shape[rank - 1] : 1;
  const std::size_t inner_stride = rank ? b_stride[rank - 1] : 0;
  const std::size_t total = shape_numel(a_shape);
  std::vector<std::size_t> coord(rank, 0);
  std::size_t b_index = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(base + j, b_index + j * inner_stride);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++coord[d];
      b_index += b_stride[d];
      if (coord[d] < a_shape[d]) break;
      b_index -= b_stride[d] * coord[d];
      coord[d] = 0;
    }
  }
}

inline bool broadcastable_into(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  const std::size_t offset = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] != 1 && b[i] != a[i + offset]) return false;
  }
  return true;
}

template <typename T>
void accumulate_into(detail::Node<T>& node, std::span<const T> values) {
  if (!node.requires_grad) return;
  node.ensure_grad();
  for (std::size_t i = 0; i < values.size(); ++i) node.grad[i] += values[i];
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Contractions

// a[..., m, k] x b[k, n] (b shared across the batch) or b[..., k, n] with
// identical leading extents. With `transpose_b`, b is given as [.., n, k].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  auto fail = [&]() {
    throw ShapeError("matmul shape mismatch: " + shape_string(as) + " x " + shape_string(bs) +
                     (transpose_b ? " (b transposed)" : ""));
  };
  if (as.size() < 2 || bs.size() < 2) fail();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t b_rows = bs[bs.size() - 2];
  const std::size_t b_cols = bs.back();
  const std::size_t kb = transpose_b ? b_cols : b_rows;
  const std::size_t n = transpose_b ? b_rows : b_cols;
  if (k != kb) fail();
  const bool shared = bs.size() == 2;
  if (!shared) {
    if (bs.size() != as.size()) fail();
    for (std::size_t i = 0; i + 2 < as.size(); ++i) {
      if (as[i] != bs[i]) fail();
    }
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  if (shared) {
    detail::gemm(ad, batch * m, k, false, bd, b_rows, b_cols, transpose_b, out.data(), false);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      detail::gemm(ad + i * m * k, m, k, false, bd + i * b_rows * b_cols, b_rows, b_cols, transpose_b,
                   out.data() + i * m * n, false);
    }
  }
  return make_op_result<T>(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [=](detail::Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        const T* g = self.grad.data();
        if (shared) {
          if (na.requires_grad) {
            na.ensure_grad();
            detail::gemm(g, batch * m, n, false, nb.data.data(), b_rows, b_cols, !transpose_b,
                         na.grad.data(), true);
          }
          if (nb.requires_grad) {
            nb.ensure_grad();
            if (!transpose_b) {
              detail::gemm(na.data.data(), batch * m, k, true, g, batch * m, n, false, nb.grad.data(), true);
            } else {
              detail::gemm(g, batch * m, n, true, na.data.data(), batch * m, k, false, nb.grad.data(), true);
            }
          }
          return;
        }
        if (na.requires_grad) na.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          const T* gi = g + i * m * n;
          const T* ai = na.data.data() + i * m * k;
          const T* bi = nb.data.data() + i * b_rows * b_cols;
          if (na.requires_grad) {
            detail::gemm(gi, m, n, false, bi, b_rows, b_cols, !transpose_b, na.grad.data() + i * m * k, true);
          }
          if (nb.requires_grad) {
            T* gb = nb.grad.data() + i * b_rows * b_cols;
            if (!transpose_b) {
              detail::gemm(ai, m, k, true, gi, m, n, false, gb, true);
            } else {
              detail::gemm(gi, m, n, true, ai, m, k, false, gb, true);
            }
          }
        }
      });
}

// x[..., in] * w[in, out] + bias[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

enum class BinaryKind { add, sub, mul };

template <BinaryKind K, typename T>
Tensor<T> binary_impl(const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  std::vector<T> out(a.numel());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out.data();
  const bool same = as == bs;
  auto fwd = [ad, bd, od](std::size_t i, std::size_t j) {
    if constexpr (K == BinaryKind::add) od[i] = ad[i] + bd[j];
    else if constexpr (K == BinaryKind::sub) od[i] = ad[i] - bd[j];
    else od[i] = ad[i] * bd[j];
  };
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) fwd(i, i);
  } else {
    for_each_broadcast(as, bs, fwd);
  }
  return make_op_result<T>(name, as, std::move(out), {a, b}, [same](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    const T* g = self.grad.data();
    const std::size_t n = self.grad.size();
    if (na.requires_grad) {
      na.ensure_grad();
      T* ga = na.grad.data();
      if constexpr (K == BinaryKind::mul) {
        const T* bv = nb.data.data();
        if (same) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
        } else {
          for_each_broadcast(na.shape, nb.shape, [&](std::size_t i, std::size_t j) { ga[i] += g[i] * bv[j]; });
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      T* gb = nb.grad.data();
      const T* av = na.data.data();
      auto bwd = [&](std::size_t i, std::size_t j) {
        if constexpr (K == BinaryKind::add) gb[j] += g[i];
        else if constexpr (K == BinaryKind::sub) gb[j] -= g[i];
        else gb[j] += g[i] * av[i];
      };
      if (same) {
        for (std::size_t i = 0; i < n; ++i) bwd(i, i);
      } else {
        for_each_broadcast(na.shape, nb.shape, bwd);
      }
    }
  });
}

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  if (!broadcastable_into(a.shape(), b.shape())) {
    throw ShapeError(std::string(name) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  switch (kind) {
    case BinaryKind::add: return binary_impl<BinaryKind::add>(a, b, name);
    case BinaryKind::sub: return binary_impl<BinaryKind::sub>(a, b, name);
    case BinaryKind::mul: return binary_impl<BinaryKind::mul>(a, b, name);
  }
  throw ContractError("unknown binary op");
}

}  // namespace detail

// b is broadcast into a's shape (trailing-aligned, extents 1 or equal).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::sub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, std::type_identity_t<T> factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_op_result<T>("scale", x.shape(), std::move(out), {x}, [factor](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, std::type_identity_t<T> value) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  return make_op_result<T>("add_scalar", x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    detail::accumulate_into<T>(*self.inputs[0], self.grad);
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * xd[i];
  return make_op_result<T>("square", x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += T{2} * in.data[i] * self.grad[i];
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * detail::sigmoid(xd[i]);
  return make_op_result<T>("silu", x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = in.data[i];
      const T s = detail::sigmoid(v);
      in.grad[i] += self.grad[i] * s * (T{1} + v * (T{1} - s));
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions over the last dimension and normalization

// Rows with -inf entries map those entries to exactly zero. A row that is
// entirely -inf has no defined distribution and is rejected.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax_lastdim on rank-0 tensor");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto xd = x.data();
  std::vector<T> out(x.numel());
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    T* o = out.data() + r * n;
    T mx = neg_inf;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    if (mx == neg_inf) throw NumericError("softmax_lastdim: fully masked row " + std::to_string(r));
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = row[j] == neg_inf ? T{0} : std::exp(row[j] - mx);
      sum += o[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_op_result<T>("softmax", x.shape(), std::move(out), {x}, [saved, n, rows](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    const auto& y = *saved;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.data() + r * n;
      const T* gr = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      T* dr = in.grad.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const std::optional<std::type_identity_t<Tensor<T>>>& gain = std::nullopt,
                    const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt,
                    double eps = kLayerNormEps) {
  if (x.rank() == 0 || x.shape().back() < 1) throw ShapeError("layernorm needs a non-empty last dimension");
  if (!(eps > 0)) throw ContractError("layernorm eps must be positive");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  if (gain && gain->numel() != n) {
    throw ShapeError("layernorm gain " + shape_string(gain->shape()) + " vs input " + shape_string(x.shape()));
  }
  if (bias && bias->numel() != n) {
    throw ShapeError("layernorm bias " + shape_string(bias->shape()) + " vs input " + shape_string(x.shape()));
  }
  const auto xd = x.data();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = static_cast<T>(is);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = static_cast<T>((row[j] - mean) * is);
      (*xhat)[r * n + j] = h;
      T v = h;
      if (gain) v *= gain->data()[j];
      if (bias) v += bias->data()[j];
      out[r * n + j] = v;
    }
  }
  const bool has_gain = gain.has_value();
  const bool has_bias = bias.has_value();
  std::vector<Tensor<T>> inputs{x};
  if (has_gain) inputs.push_back(*gain);
  if (has_bias) inputs.push_back(*bias);
  return make_op_result_list<T>(
      "layernorm", x.shape(), std::move(out), inputs,
      [xhat, inv_std, n, rows, has_gain, has_bias](detail::Node<T>& self) {
        auto& nx = *self.inputs[0];
        detail::Node<T>* ng = has_gain ? self.inputs[1].get() : nullptr;
        detail::Node<T>* nb = has_bias ? self.inputs[has_gain ? 2 : 1].get() : nullptr;
        if (ng && ng->requires_grad) ng->ensure_grad();
        if (nb && nb->requires_grad) nb->ensure_grad();
        if (nx.requires_grad) nx.ensure_grad();
        std::vector<T> dh(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * n;
          const T* h = xhat->data() + r * n;
          for (std::size_t j = 0; j < n; ++j) {
            if (ng && ng->requires_grad) ng->grad[j] += g[j] * h[j];
            if (nb && nb->requires_grad) nb->grad[j] += g[j];
            dh[j] = ng ? g[j] * ng->data[j] : g[j];
          }
          if (!nx.requires_grad) continue;
          T mean_dh = 0;
          T mean_dh_h = 0;
          for (std::size_t j = 0; j < n; ++j) {
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[j];
          }
          mean_dh /= static_cast<T>(n);
          mean_dh_h /= static_cast<T>(n);
          const T is = (*inv_std)[r];
          T* dx = nx.grad.data() + r * n;
          for (std::size_t j = 0; j < n; ++j) dx[j] += is * (dh[j] - mean_dh - h[j] * mean_dh_h);
        }
      });
}

// Drops the last dimension (rank-1 input yields shape (1)).
template <typename T>
Tensor<T> mean_lastdim(const Tensor<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(rows, T{0});
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += xd[r * n + j];
    out[r] = s / static_cast<T>(n);
  }
  return make_op_result<T>("mean_lastdim", std::move(out_shape), std::move(out), {x}, [n, rows](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    const T inv = T{1} / static_cast<T>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) in.grad[r * n + j] += self.grad[r] * inv;
    }
  });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = 0;
  for (auto v : x.data()) s += v;
  return make_op_result<T>("sum", Shape{1}, std::vector<T>{s}, {x}, [](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    const T g = self.grad[0];
    for (auto& v : in.grad) v += g;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T{1} / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim of zero tensors");
  const Shape& first = parts.front().shape();
  Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead) {
      throw ShapeError("concat_lastdim shape mismatch: " + shape_string(first) + " vs " + shape_string(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return make_op_result_list<T>("concat", std::move(out_shape), std::move(out), parts,
                                [widths, rows, total](detail::Node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    auto& in = *self.inputs[k];
                                    if (in.requires_grad) {
                                      in.ensure_grad();
                                      for (std::size_t r = 0; r < rows; ++r) {
                                        for (std::size_t j = 0; j < widths[k]; ++j) {
                                          in.grad[r * widths[k] + j] += self.grad[r * total + off + j];
                                        }
                                      }
                                    }
                                    off += widths[k];
                                  }
                                });
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t start, std::size_t length) {
  const std::size_t n = x.shape().back();
  if (length == 0 || start + length > n) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(rows * length);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xd.data() + r * n + start, length, out.data() + r * length);
  Shape out_shape = x.shape();
  out_shape.back() = length;
  return make_op_result<T>("slice", std::move(out_shape), std::move(out), {x},
                           [n, rows, start, length](detail::Node<T>& self) {
                             auto& in = *self.inputs[0];
                             in.ensure_grad();
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t j = 0; j < length; ++j) {
                                 in.grad[r * n + start + j] += self.grad[r * length + j];
                               }
                             }
                           });
}

template <typename T>
std::vector<Tensor<T>> split_lastdim(const Tensor<T>& x, std::size_t pieces) {
  const std::size_t n = x.shape().back();
  if (pieces == 0 || n % pieces != 0) {
    throw ShapeError("cannot split " + shape_string(x.shape()) + " into " + std::to_string(pieces) + " pieces");
  }
  const std::size_t w = n / pieces;
  std::vector<Tensor<T>> out;
  out.reserve(pieces);
  for (std::size_t k = 0; k < pieces; ++k) out.push_back(slice_lastdim(x, k * w, w));
  return out;
}

// [a, b, c, d] -> [a, c, b, d]
template <typename T>
Tensor<T> swap_dims_1_2(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("swap_dims_1_2 needs rank 4, got " + shape_string(x.shape()));
  const auto s = x.shape();
  const std::size_t A = s[0], B = s[1], C = s[2], D = s[3];
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        std::copy_n(xd.data() + ((a * B + b) * C + c) * D, D, out.data() + ((a * C + c) * B + b) * D);
  return make_op_result<T>("swap12", Shape{A, C, B, D}, std::move(out), {x}, [=](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
          const T* g = self.grad.data() + ((a * C + c) * B + b) * D;
          T* d = in.grad.data() + ((a * B + b) * C + c) * D;
          for (std::size_t j = 0; j < D; ++j) d[j] += g[j];
        }
  });
}

// Row gather: table[V, d], indices -> [n, d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> indices) {
  if (table.rank() != 2) throw ShapeError("embedding table must be rank 2, got " + shape_string(table.shape()));
  const std::size_t V = table.dim(0), d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= V) {
      throw ShapeError("embedding index " + std::to_string(indices[i]) + " outside table of " + std::to_string(V));
    }
    std::copy_n(table.data().data() + indices[i] * d, d, out.data() + i * d);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return make_op_result<T>("embedding", Shape{indices.size(), d}, std::move(out), {table},
                           [idx, d](detail::Node<T>& self) {
                             auto& in = *self.inputs[0];
                             in.ensure_grad();
                             for (std::size_t i = 0; i < idx.size(); ++i) {
                               for (std::size_t j = 0; j < d; ++j) in.grad[idx[i] * d + j] += self.grad[i * d + j];
                             }
                           });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Attention helpers

// Pairwise rotation of x[B, H, L, D] by per-(batch, token) angles. `cos` and
// `sin` hold [B, L, D/2] entries; pair i is (x[2i], x[2i+1]).
template <typename T>
Tensor<T> rotary(const Tensor<T>& x, std::shared_ptr<const std::vector<std::type_identity_t<T>>> cos,
                 std::shared_ptr<const std::vector<std::type_identity_t<T>>> sin) {
  if (x.rank() != 4 || x.dim(3) % 2 != 0) throw ShapeError("rotary needs [B,H,L,even D], got " + shape_string(x.shape()));
  const std::size_t B = x.dim(0), H = x.dim(1), L = x.dim(2), P = x.dim(3) / 2;
  if (cos->size() != B * L * P || sin->size() != B * L * P) {
    throw ShapeError("rotary table size " + std::to_string(cos->size()) + " does not cover " + shape_string(x.shape()));
  }
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t base = ((b * H + h) * L + l) * 2 * P;
        const T* c = cos->data() + (b * L + l) * P;
        const T* s = sin->data() + (b * L + l) * P;
        for (std::size_t i = 0; i < P; ++i) {
          const T x0 = xd[base + 2 * i], x1 = xd[base + 2 * i + 1];
          out[base + 2 * i] = x0 * c[i] - x1 * s[i];
          out[base + 2 * i + 1] = x0 * s[i] + x1 * c[i];
        }
      }
  return make_op_result<T>("rotary", x.shape(), std::move(out), {x}, [=](detail::Node<T>& self) {
    auto& in = *self.inputs[0];
    in.ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t base = ((b * H + h) * L + l) * 2 * P;
          const T* c = cos->data() + (b * L + l) * P;
          const T* s = sin->data() + (b * L + l) * P;
          for (std::size_t i = 0; i < P; ++i) {
            const T g0 = self.grad[base + 2 * i], g1 = self.grad[base + 2 * i + 1];
            in.grad[base + 2 * i] += g0 * c[i] + g1 * s[i];
            in.grad[base + 2 * i + 1] += -g0 * s[i] + g1 * c[i];
          }
        }
  });
}

// logits[B, H, Lq, Lk] + mask[B, Lk] (additive: 0 keeps, -inf drops a key).
template <typename T>
Tensor<T> add_key_mask(const Tensor<T>& logits, std::shared_ptr<const std::vector<std::type_identity_t<T>>> mask) {
  if (logits.rank() != 4) throw ShapeError("add_key_mask needs [B,H,Lq,Lk], got " + shape_string(logits.shape()));
  const std::size_t B = logits.dim(0), H = logits.dim(1), Lq = logits.dim(2), Lk = logits.dim(3);
  if (mask->size() != B * Lk) throw ShapeError("key mask size does not match logits " + shape_string(logits.shape()));
  std::vector<T> out(logits.data().begin(), logits.data().end());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t q = 0; q < Lq; ++q) {
        T* row = out.data() + ((b * H + h) * Lq + q) * Lk;
        const T* m = mask->data() + b * Lk;
        for (std::size_t k = 0; k < Lk; ++k) row[k] += m[k];
      }
  return make_op_result<T>("add_key_mask", logits.shape(), std::move(out), {logits}, [](detail::Node<T>& self) {
    detail::accumulate_into<T>(*self.inputs[0], self.grad);
  });
}

}  // namespace fitv2
