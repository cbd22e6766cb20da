#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "naptune/core/rng.hpp"
#include "naptune/tensor/tensor.hpp"

namespace naptune {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <class T>
using MutMap = Eigen::Map<RowMatrix<T>>;

// Rank-1 tensors are treated as a single row.
template <class T>
std::pair<std::size_t, std::size_t> rows_cols(const BasicTensor<T>& t, const char* op) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  if (t.rank() == 1) return {1, t.dim(0)};
  throw DimensionError(std::string(op) + ": expected a 1-D or 2-D tensor, got " + shape_str(t.shape()));
}

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

template <class T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <class T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T>& self) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return detail::make_result<T>(a.shape(), std::move(out), {a.node()}, [factor](TensorNode<T>& self) {
    auto& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

/// x[m x n] + bias[n], bias broadcast over rows.
template <class T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  const auto [m, n] = detail::rows_cols(x, "add_row");
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.data()[r * n + c] + bias.data()[c];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node(), bias.node()},
                                [m = m, n = n](TensorNode<T>& self) {
                                  auto& px = self.parents[0];
                                  auto& pb = self.parents[1];
                                  if (px->requires_grad) {
                                    auto& g = px->grad_ref();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (pb->requires_grad) {
                                    auto& g = pb->grad_ref();
                                    for (std::size_t r = 0; r < m; ++r)
                                      for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
                                  }
                                });
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(x.data()[i]);
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [](TensorNode<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * detail::gelu_grad(p->data[i]);
  });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_value(x.data()[i]);
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [](TensorNode<T>& self) {
    auto& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.data[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

/// Inverted dropout. Identity (the same tensor) when `rng` is null or p == 0.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (rng == nullptr || p == 0.0) return x;
  const T keep_scale = T(1) / T(1.0 - p);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng->uniform() >= p ? keep_scale : T(0);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()},
                                [mask = std::move(mask)](TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_ref();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                                });
}

// ---------------------------------------------------------------- reductions

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  return detail::make_result<T>(Shape{}, {s}, {x.node()}, [](TensorNode<T>& self) {
    auto& g = self.parents[0]->grad_ref();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum of same-shaped tensors.
template <class T>
BasicTensor<T> add_n(const std::vector<BasicTensor<T>>& xs) {
  if (xs.empty()) throw ContractError("add_n: no inputs");
  std::vector<T> out(xs[0].numel(), T(0));
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& x : xs) {
    detail::require_same_shape(xs[0], x, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.data()[i];
    nodes.push_back(x.node());
  }
  return detail::make_result<T>(xs[0].shape(), std::move(out), std::move(nodes), [](TensorNode<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Mean over rows: [m x n] -> [1 x n], restricted to rows [begin, m).
template <class T>
BasicTensor<T> mean_rows(const BasicTensor<T>& x, std::size_t begin = 0) {
  const auto [m, n] = detail::rows_cols(x, "mean_rows");
  if (begin >= m) throw DimensionError("mean_rows: no rows left after skipping " + std::to_string(begin));
  const T inv = T(1) / static_cast<T>(m - begin);
  std::vector<T> out(n, T(0));
  for (std::size_t r = begin; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += x.data()[r * n + c];
  for (auto& v : out) v *= inv;
  return detail::make_result<T>(Shape{1, n}, std::move(out), {x.node()},
                                [m = m, n = n, begin, inv](TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_ref();
                                  for (std::size_t r = begin; r < m; ++r)
                                    for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c] * inv;
                                });
}

// ---------------------------------------------------------------- shape ops

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  const auto [m, n] = detail::rows_cols(x, "transpose");
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = x.data()[r * n + c];
  return detail::make_result<T>(Shape{n, m}, std::move(out), {x.node()}, [m = m, n = n](TensorNode<T>& self) {
    auto& g = self.parents[0]->grad_ref();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c * m + r];
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {x.node()}, [](TensorNode<T>& self) {
    auto& g = self.parents[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Stacks 2-D (or row) tensors with equal column counts along rows.
template <class T>
BasicTensor<T> concat_rows(const std::vector<BasicTensor<T>>& xs) {
  if (xs.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = detail::rows_cols(xs[0], "concat_rows").second;
  std::size_t rows = 0;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& x : xs) {
    const auto [m, c] = detail::rows_cols(x, "concat_rows");
    if (c != n) throw DimensionError("concat_rows: column mismatch " + shape_str(xs[0].shape()) + " vs " + shape_str(x.shape()));
    rows += m;
    nodes.push_back(x.node());
  }
  std::vector<T> out;
  out.reserve(rows * n);
  for (const auto& x : xs) out.insert(out.end(), x.data().begin(), x.data().end());
  return detail::make_result<T>(Shape{rows, n}, std::move(out), std::move(nodes), [](TensorNode<T>& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->data.size();
      if (p->requires_grad) {
        auto& g = p->grad_ref();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

template <class T>
BasicTensor<T> slice_rows(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  const auto [m, n] = detail::rows_cols(x, "slice_rows");
  if (begin > end || end > m) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin() + begin * n, x.data().begin() + end * n);
  return detail::make_result<T>(Shape{end - begin, n}, std::move(out), {x.node()},
                                [begin, n = n](TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_ref();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
                                });
}

template <class T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  const auto [m, n] = detail::rows_cols(x, "slice_cols");
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(x.data().begin() + r * n + begin, w, out.begin() + r * w);
  return detail::make_result<T>(Shape{m, w}, std::move(out), {x.node()},
                                [m = m, n = n, w, begin](TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_ref();
                                  for (std::size_t r = 0; r < m; ++r)
                                    for (std::size_t c = 0; c < w; ++c) g[r * n + begin + c] += self.grad[r * w + c];
                                });
}

template <class T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& xs) {
  if (xs.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = detail::rows_cols(xs[0], "concat_cols").first;
  std::vector<std::size_t> widths;
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::size_t total = 0;
  for (const auto& x : xs) {
    const auto [r, c] = detail::rows_cols(x, "concat_cols");
    if (r != m) throw DimensionError("concat_cols: row mismatch " + shape_str(xs[0].shape()) + " vs " + shape_str(x.shape()));
    widths.push_back(c);
    total += c;
    nodes.push_back(x.node());
  }
  std::vector<T> out(m * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(xs[k].data().begin() + r * widths[k], widths[k], out.begin() + r * total + col);
    col += widths[k];
  }
  return detail::make_result<T>(Shape{m, total}, std::move(out), std::move(nodes),
                                [m, total, widths = std::move(widths)](TensorNode<T>& self) {
                                  std::size_t col = 0;
                                  for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                    auto& p = self.parents[k];
                                    if (p->requires_grad) {
                                      auto& g = p->grad_ref();
                                      for (std::size_t r = 0; r < m; ++r)
                                        for (std::size_t c = 0; c < widths[k]; ++c)
                                          g[r * widths[k] + c] += self.grad[r * total + col + c];
                                    }
                                    col += widths[k];
                                  }
                                });
}

// ---------------------------------------------------------------- linear algebra

/// Matrix product of [m x k] and [k x n].
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto [m, k] = detail::rows_cols(a, "matmul");
  const auto [k2, n] = detail::rows_cols(b, "matmul");
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  detail::MutMap<T>(out.data(), m, n).noalias() =
      detail::ConstMap<T>(a.data().data(), m, k) * detail::ConstMap<T>(b.data().data(), k, n);
  return detail::make_result<T>(Shape{m, n}, std::move(out), {a.node(), b.node()},
                                [m = m, k = k, n = n](TensorNode<T>& self) {
                                  auto& pa = self.parents[0];
                                  auto& pb = self.parents[1];
                                  detail::ConstMap<T> dy(self.grad.data(), m, n);
                                  if (pa->requires_grad) {
                                    detail::MutMap<T>(pa->grad_ref().data(), m, k).noalias() +=
                                        dy * detail::ConstMap<T>(pb->data.data(), k, n).transpose();
                                  }
                                  if (pb->requires_grad) {
                                    detail::MutMap<T>(pb->grad_ref().data(), k, n).noalias() +=
                                        detail::ConstMap<T>(pa->data.data(), m, k).transpose() * dy;
                                  }
                                });
}

/// x[m x in] * weight[in x out] + bias[out]. An undefined bias is skipped.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  const auto [m, in] = detail::rows_cols(x, "linear");
  if (weight.rank() != 2 || weight.dim(0) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  const std::size_t out_dim = weight.dim(1);
  if (bias.defined() && bias.numel() != out_dim) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  std::vector<T> out(m * out_dim);
  detail::MutMap<T> y(out.data(), m, out_dim);
  y.noalias() = detail::ConstMap<T>(x.data().data(), m, in) * detail::ConstMap<T>(weight.data().data(), in, out_dim);
  if (bias.defined()) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += bias.data()[c];
  }
  std::vector<std::shared_ptr<TensorNode<T>>> inputs{x.node(), weight.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  return detail::make_result<T>(Shape{m, out_dim}, std::move(out), std::move(inputs),
                                [m = m, in = in, out_dim](TensorNode<T>& self) {
                                  auto& px = self.parents[0];
                                  auto& pw = self.parents[1];
                                  detail::ConstMap<T> dy(self.grad.data(), m, out_dim);
                                  if (px->requires_grad) {
                                    detail::MutMap<T>(px->grad_ref().data(), m, in).noalias() +=
                                        dy * detail::ConstMap<T>(pw->data.data(), in, out_dim).transpose();
                                  }
                                  if (pw->requires_grad) {
                                    detail::MutMap<T>(pw->grad_ref().data(), in, out_dim).noalias() +=
                                        detail::ConstMap<T>(px->data.data(), m, in).transpose() * dy;
                                  }
                                  if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                                    auto& g = self.parents[2]->grad_ref();
                                    for (std::size_t r = 0; r < m; ++r)
                                      for (std::size_t c = 0; c < out_dim; ++c) g[c] += self.grad[r * out_dim + c];
                                  }
                                });
}

/// Valid (unpadded) cross-correlation: x[C_in x T], kernel[C_out x C_in x k]
/// -> [C_out x L] with L = floor((T - k) / stride) + 1.
template <class T>
BasicTensor<T> conv1d(const BasicTensor<T>& x, const BasicTensor<T>& kernel, std::size_t stride) {
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  const auto [c_in, len] = detail::rows_cols(x, "conv1d");
  if (kernel.rank() != 3 || kernel.dim(1) != c_in) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(kernel.shape()));
  }
  const std::size_t c_out = kernel.dim(0);
  const std::size_t k = kernel.dim(2);
  if (len < k) {
    throw InputTooShortError("conv1d: input length " + std::to_string(len) + " is shorter than kernel size " +
                             std::to_string(k));
  }
  const std::size_t out_len = (len - k) / stride + 1;
  const std::size_t patch = c_in * k;
  // im2col: cols[(ci*k + j) x t] = x[ci, t*stride + j]
  std::vector<T> cols(patch * out_len);
  for (std::size_t ci = 0; ci < c_in; ++ci)
    for (std::size_t j = 0; j < k; ++j) {
      T* row = cols.data() + (ci * k + j) * out_len;
      const T* src = x.data().data() + ci * len + j;
      for (std::size_t t = 0; t < out_len; ++t) row[t] = src[t * stride];
    }
  std::vector<T> out(c_out * out_len);
  detail::MutMap<T>(out.data(), c_out, out_len).noalias() =
      detail::ConstMap<T>(kernel.data().data(), c_out, patch) * detail::ConstMap<T>(cols.data(), patch, out_len);
  return detail::make_result<T>(
      Shape{c_out, out_len}, std::move(out), {x.node(), kernel.node()},
      [cols = std::move(cols), c_in = c_in, len = len, c_out, k, stride, out_len, patch](TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pk = self.parents[1];
        detail::ConstMap<T> dy(self.grad.data(), c_out, out_len);
        if (pk->requires_grad) {
          detail::MutMap<T>(pk->grad_ref().data(), c_out, patch).noalias() +=
              dy * detail::ConstMap<T>(cols.data(), patch, out_len).transpose();
        }
        if (px->requires_grad) {
          detail::RowMatrix<T> dcols = detail::ConstMap<T>(pk->data.data(), c_out, patch).transpose() * dy;
          auto& g = px->grad_ref();
          for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t j = 0; j < k; ++j) {
              const T* row = dcols.data() + (ci * k + j) * out_len;
              T* dst = g.data() + ci * len + j;
              for (std::size_t t = 0; t < out_len; ++t) dst[t * stride] += row[t];
            }
        }
      });
}

// ---------------------------------------------------------------- normalization

/// GroupNorm over x[C x L]: each group of C/groups channels is normalized over
/// (channels-in-group x time), then scaled/shifted per channel.
template <class T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, std::size_t groups, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-5)) {
  const auto [c, len] = detail::rows_cols(x, "group_norm");
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) +
                      " groups");
  }
  if (gain.numel() != c || bias.numel() != c) throw DimensionError("group_norm: affine parameters must have C entries");
  const std::size_t per = c / groups;
  const std::size_t count = per * len;
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(groups);
  std::vector<T> out(x.numel());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const T* src = x.data().data() + gi * count;
    T mu = T(0);
    for (std::size_t i = 0; i < count; ++i) mu += src[i];
    mu /= static_cast<T>(count);
    T var = T(0);
    for (std::size_t i = 0; i < count; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(count);
    rstd[gi] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = gi * count + i;
      const std::size_t ch = idx / len;
      xhat[idx] = (src[i] - mu) * rstd[gi];
      out[idx] = xhat[idx] * gain.data()[ch] + bias.data()[ch];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [xhat = std::move(xhat), rstd = std::move(rstd), groups, count, len = len](TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (pg->requires_grad) {
          auto& g = pg->grad_ref();
          for (std::size_t i = 0; i < xhat.size(); ++i) g[i / len] += self.grad[i] * xhat[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_ref();
          for (std::size_t i = 0; i < xhat.size(); ++i) g[i / len] += self.grad[i];
        }
        if (px->requires_grad) {
          auto& g = px->grad_ref();
          std::vector<T> dxhat(count);
          for (std::size_t gi = 0; gi < groups; ++gi) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t i = 0; i < count; ++i) {
              const std::size_t idx = gi * count + i;
              dxhat[i] = self.grad[idx] * pg->data[idx / len];
              s1 += dxhat[i];
              s2 += dxhat[i] * xhat[idx];
            }
            const T inv_n = T(1) / static_cast<T>(count);
            for (std::size_t i = 0; i < count; ++i) {
              const std::size_t idx = gi * count + i;
              g[idx] += rstd[gi] * (dxhat[i] - inv_n * s1 - xhat[idx] * inv_n * s2);
            }
          }
        }
      });
}

/// LayerNorm over the last axis of x[m x n].
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          T eps = T(1e-5)) {
  const auto [m, n] = detail::rows_cols(x, "layer_norm");
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(n) + " entries");
  }
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(m);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < m; ++r) {
    const T* src = x.data().data() + r * n;
    T mu = T(0);
    for (std::size_t i = 0; i < n; ++i) mu += src[i];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[r * n + i] = (src[i] - mu) * rstd[r];
      out[r * n + i] = xhat[r * n + i] * gain.data()[i] + bias.data()[i];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [xhat = std::move(xhat), rstd = std::move(rstd), m = m, n = n](TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (pg->requires_grad) {
          auto& g = pg->grad_ref();
          for (std::size_t i = 0; i < xhat.size(); ++i) g[i % n] += self.grad[i] * xhat[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_ref();
          for (std::size_t i = 0; i < xhat.size(); ++i) g[i % n] += self.grad[i];
        }
        if (px->requires_grad) {
          auto& g = px->grad_ref();
          std::vector<T> dxhat(n);
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t r = 0; r < m; ++r) {
            T s1 = T(0), s2 = T(0);
            for (std::size_t i = 0; i < n; ++i) {
              dxhat[i] = self.grad[r * n + i] * pg->data[i];
              s1 += dxhat[i];
              s2 += dxhat[i] * xhat[r * n + i];
            }
            for (std::size_t i = 0; i < n; ++i)
              g[r * n + i] += rstd[r] * (dxhat[i] - inv_n * s1 - xhat[r * n + i] * inv_n * s2);
          }
        }
      });
}

/// Softmax over the last axis.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x) {
  const auto [m, n] = detail::rows_cols(x, "softmax");
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < m; ++r) {
    const T* src = x.data().data() + r * n;
    T* dst = out.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) total += (dst[i] = std::exp(src[i] - mx));
    for (std::size_t i = 0; i < n; ++i) dst[i] /= total;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [m = m, n = n](TensorNode<T>& self) {
    auto& g = self.parents[0]->grad_ref();
    for (std::size_t r = 0; r < m; ++r) {
      T dot = T(0);
      for (std::size_t i = 0; i < n; ++i) dot += self.grad[r * n + i] * self.data[r * n + i];
      for (std::size_t i = 0; i < n; ++i) g[r * n + i] += self.data[r * n + i] * (self.grad[r * n + i] - dot);
    }
  });
}

/// Scales each row to unit Euclidean norm.
template <class T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x, T eps = T(1e-12)) {
  const auto [m, n] = detail::rows_cols(x, "l2_normalize_rows");
  std::vector<T> out(x.numel());
  std::vector<T> inv_norm(m);
  for (std::size_t r = 0; r < m; ++r) {
    T ss = T(0);
    for (std::size_t i = 0; i < n; ++i) ss += x.data()[r * n + i] * x.data()[r * n + i];
    inv_norm[r] = T(1) / std::max(std::sqrt(ss), eps);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = x.data()[r * n + i] * inv_norm[r];
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()},
                                [inv_norm = std::move(inv_norm), m = m, n = n](TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_ref();
                                  for (std::size_t r = 0; r < m; ++r) {
                                    T dot = T(0);
                                    for (std::size_t i = 0; i < n; ++i) dot += self.grad[r * n + i] * self.data[r * n + i];
                                    for (std::size_t i = 0; i < n; ++i)
                                      g[r * n + i] += inv_norm[r] * (self.grad[r * n + i] - self.data[r * n + i] * dot);
                                  }
                                });
}

// ---------------------------------------------------------------- losses

/// Mean binary cross-entropy between probabilities and {0,1} targets, with
/// probabilities clamped to [eps, 1 - eps]. Clamped entries pass no gradient.
template <class T>
BasicTensor<T> binary_cross_entropy(const BasicTensor<T>& probs, std::span<const T> targets, T eps = T(1e-7)) {
  if (probs.numel() != targets.size()) {
    throw DimensionError("binary_cross_entropy: " + std::to_string(probs.numel()) + " probabilities vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t c = targets.size();
  T total = T(0);
  for (std::size_t j = 0; j < c; ++j) {
    const T p = std::clamp(probs.data()[j], eps, T(1) - eps);
    total += targets[j] * std::log(p) + (T(1) - targets[j]) * std::log(T(1) - p);
  }
  std::vector<T> tgt(targets.begin(), targets.end());
  return detail::make_result<T>(Shape{}, {-total / static_cast<T>(c)}, {probs.node()},
                                [tgt = std::move(tgt), eps](TensorNode<T>& self) {
                                  auto& p = self.parents[0];
                                  auto& g = p->grad_ref();
                                  const T inv_c = T(1) / static_cast<T>(tgt.size());
                                  for (std::size_t j = 0; j < tgt.size(); ++j) {
                                    const T pj = p->data[j];
                                    if (pj < eps || pj > T(1) - eps) continue;
                                    g[j] += -self.grad[0] * inv_c * (tgt[j] / pj - (T(1) - tgt[j]) / (T(1) - pj));
                                  }
                                });
}

/// Contrastive cross-entropy over a similarity-logit matrix S[n x n]: for each
/// anchor row p, -log(exp(S[p,q]) / sum_{k != p} exp(S[p,k])) with q =
/// partner[p]; averaged over all anchors.
template <class T>
BasicTensor<T> contrastive_cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> partner) {
  const auto [n, n2] = detail::rows_cols(logits, "contrastive_cross_entropy");
  if (n != n2 || partner.size() != n) {
    throw DimensionError("contrastive_cross_entropy: need a square matrix with one partner per row, got " +
                         shape_str(logits.shape()));
  }
  std::vector<T> probs(n * n, T(0));
  T total = T(0);
  for (std::size_t p = 0; p < n; ++p) {
    if (partner[p] >= n || partner[p] == p) throw ContractError("contrastive_cross_entropy: invalid partner index");
    const T* row = logits.data().data() + p * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < n; ++k)
      if (k != p) mx = std::max(mx, row[k]);
    T denom = T(0);
    for (std::size_t k = 0; k < n; ++k)
      if (k != p) denom += (probs[p * n + k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < n; ++k) probs[p * n + k] /= denom;
    total += -(row[partner[p]] - mx - std::log(denom));
  }
  std::vector<std::size_t> part(partner.begin(), partner.end());
  return detail::make_result<T>(Shape{}, {total / static_cast<T>(n)}, {logits.node()},
                                [probs = std::move(probs), part = std::move(part), n = n](TensorNode<T>& self) {
                                  auto& g = self.parents[0]->grad_ref();
                                  const T w = self.grad[0] / static_cast<T>(n);
                                  for (std::size_t p = 0; p < n; ++p) {
                                    for (std::size_t k = 0; k < n; ++k) g[p * n + k] += w * probs[p * n + k];
                                    g[p * n + part[p]] -= w;
                                  }
                                });
}

}  // namespace naptune
