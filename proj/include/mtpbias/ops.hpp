#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mtpbias/tensor.hpp"

// Differentiable operation set. Everything the model needs is built from
// these free functions; each op attaches its reverse-mode closure.
namespace mtpbias::ops {

template <typename S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
  check_same_shape(a, b, "add");
  std::vector<S> out(a.data(), a.data() + a.size());
  ArrMap<S>(out.data(), out.size()) += b.arr();
  return Tensor<S>::make_op(a.shape(), std::move(out), {a, b},
                            [a, b](detail::TensorNode<S>& n) mutable {
                              ConstArrMap<S> g(n.grad.data(), n.size());
                              if (a.requires_grad()) {
                                a.node()->ensure_grad();
                                a.grad_arr() += g;
                              }
                              if (b.requires_grad()) {
                                b.node()->ensure_grad();
                                b.grad_arr() += g;
                              }
                            });
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
  check_same_shape(a, b, "mul");
  std::vector<S> out(static_cast<size_t>(a.size()));
  ArrMap<S>(out.data(), out.size()) = a.arr() * b.arr();
  return Tensor<S>::make_op(a.shape(), std::move(out), {a, b},
                            [a, b](detail::TensorNode<S>& n) mutable {
                              ConstArrMap<S> g(n.grad.data(), n.size());
                              if (a.requires_grad()) {
                                a.node()->ensure_grad();
                                a.grad_arr() += g * b.arr();
                              }
                              if (b.requires_grad()) {
                                b.node()->ensure_grad();
                                b.grad_arr() += g * a.arr();
                              }
                            });
}

template <typename S>
Tensor<S> scale(Tensor<S> a, S factor) {
  std::vector<S> out(static_cast<size_t>(a.size()));
  ArrMap<S>(out.data(), out.size()) = a.arr() * factor;
  return Tensor<S>::make_op(a.shape(), std::move(out), {a},
                            [a, factor](detail::TensorNode<S>& n) mutable {
                              if (!a.requires_grad()) return;
                              a.node()->ensure_grad();
                              a.grad_arr() += ConstArrMap<S>(n.grad.data(), n.size()) * factor;
                            });
}

// Adds a length-c row vector to every row of an r x c matrix.
template <typename S>
Tensor<S> add_rowvec(Tensor<S> m, Tensor<S> v) {
  if (v.size() != m.cols())
    throw DimensionError("add_rowvec: " + shape_str(m.shape()) + " vs " + shape_str(v.shape()));
  std::vector<S> out(m.data(), m.data() + m.size());
  MatMap<S> o(out.data(), m.rows(), m.cols());
  o.rowwise() += ConstMatMap<S>(v.data(), 1, v.size()).row(0);
  return Tensor<S>::make_op(m.shape(), std::move(out), {m, v},
                            [m, v](detail::TensorNode<S>& n) mutable {
                              ConstMatMap<S> g(n.grad.data(), m.rows(), m.cols());
                              if (m.requires_grad()) {
                                m.node()->ensure_grad();
                                m.grad_mat() += g;
                              }
                              if (v.requires_grad()) {
                                v.node()->ensure_grad();
                                MatMap<S> gv(v.grad(), 1, v.size());
                                gv.row(0) += g.colwise().sum();
                              }
                            });
}

template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b, bool trans_a = false, bool trans_b = false) {
  const int am = trans_a ? a.cols() : a.rows();
  const int ak = trans_a ? a.rows() : a.cols();
  const int bk = trans_b ? b.cols() : b.rows();
  const int bn = trans_b ? b.rows() : b.cols();
  if (ak != bk)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         (trans_a ? "^T" : "") + " vs " + shape_str(b.shape()) +
                         (trans_b ? "^T" : ""));
  std::vector<S> out(static_cast<size_t>(am) * bn);
  MatMap<S> c(out.data(), am, bn);
  const auto A = a.mat();
  const auto B = b.mat();
  if (!trans_a && !trans_b)
    c.noalias() = A * B;
  else if (trans_a && !trans_b)
    c.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b)
    c.noalias() = A * B.transpose();
  else
    c.noalias() = A.transpose() * B.transpose();
  return Tensor<S>::make_op(
      {am, bn}, std::move(out), {a, b},
      [a, b, trans_a, trans_b, am, bn](detail::TensorNode<S>& n) mutable {
        ConstMatMap<S> g(n.grad.data(), am, bn);
        const auto A = a.mat();
        const auto B = b.mat();
        if (a.requires_grad()) {
          a.node()->ensure_grad();
          auto ga = a.grad_mat();
          // d(opA) = dC * opB^T, mapped back through the transpose flag.
          if (!trans_a) {
            if (!trans_b)
              ga.noalias() += g * B.transpose();
            else
              ga.noalias() += g * B;
          } else {
            if (!trans_b)
              ga.noalias() += B * g.transpose();
            else
              ga.noalias() += B.transpose() * g.transpose();
          }
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          auto gb = b.grad_mat();
          if (!trans_b) {
            if (!trans_a)
              gb.noalias() += A.transpose() * g;
            else
              gb.noalias() += A * g;
          } else {
            if (!trans_a)
              gb.noalias() += g.transpose() * A;
            else
              gb.noalias() += g.transpose() * A.transpose();
          }
        }
      });
}

// Row-stable softmax. axis selects the reduced axis of a rank-2 tensor
// (1 = within each row, 0 = within each column); rank-1 tensors reduce over
// their single axis.
template <typename S>
Tensor<S> softmax(Tensor<S> x, int axis = -1) {
  const int r = x.rows(), c = x.cols();
  if (x.rank() == 1 && axis != 0 && axis != -1)
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for rank-1 tensor");
  if (x.rank() == 2 && axis != 0 && axis != 1 && axis != -1)
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for rank-2 tensor");
  const bool by_row = (x.rank() == 1) || axis == 1 || axis == -1;

  std::vector<S> out(static_cast<size_t>(x.size()));
  const S* in = x.data();
  const int outer = by_row ? r : c;
  const int inner = by_row ? c : r;
  const int ostride = by_row ? c : 1;
  const int istride = by_row ? 1 : c;
  for (int i = 0; i < outer; ++i) {
    const S* row = in + static_cast<size_t>(i) * ostride;
    S m = row[0];
    for (int j = 1; j < inner; ++j) m = std::max(m, row[static_cast<size_t>(j) * istride]);
    if (std::isnan(static_cast<double>(m)))
      throw NumericError("softmax: NaN in input");
    S sum = S(0);
    S* orow = out.data() + static_cast<size_t>(i) * ostride;
    for (int j = 0; j < inner; ++j) {
      const S e = std::exp(row[static_cast<size_t>(j) * istride] - m);
      orow[static_cast<size_t>(j) * istride] = e;
      sum += e;
    }
    const S inv = S(1) / sum;
    for (int j = 0; j < inner; ++j) orow[static_cast<size_t>(j) * istride] *= inv;
  }
  Tensor<S> y = Tensor<S>::make_op(
      x.shape(), std::move(out), {x},
      [x, by_row, outer, inner, ostride, istride](detail::TensorNode<S>& n) mutable {
        if (!x.requires_grad()) return;
        x.node()->ensure_grad();
        const S* yv = n.data.data();
        const S* gy = n.grad.data();
        S* gx = x.grad();
        for (int i = 0; i < outer; ++i) {
          const size_t base = static_cast<size_t>(i) * ostride;
          S dot = S(0);
          for (int j = 0; j < inner; ++j) {
            const size_t at = base + static_cast<size_t>(j) * istride;
            dot += gy[at] * yv[at];
          }
          for (int j = 0; j < inner; ++j) {
            const size_t at = base + static_cast<size_t>(j) * istride;
            gx[at] += yv[at] * (gy[at] - dot);
          }
        }
      });
  return y;
}

template <typename S>
Tensor<S> log(Tensor<S> x) {
  std::vector<S> out(static_cast<size_t>(x.size()));
  ArrMap<S>(out.data(), out.size()) = x.arr().log();
  return Tensor<S>::make_op(x.shape(), std::move(out), {x},
                            [x](detail::TensorNode<S>& n) mutable {
                              if (!x.requires_grad()) return;
                              x.node()->ensure_grad();
                              x.grad_arr() += ConstArrMap<S>(n.grad.data(), n.size()) / x.arr();
                            });
}

template <typename S>
Tensor<S> tanh(Tensor<S> x) {
  std::vector<S> out(static_cast<size_t>(x.size()));
  ArrMap<S>(out.data(), out.size()) = x.arr().tanh();
  return Tensor<S>::make_op(x.shape(), std::move(out), {x},
                            [x](detail::TensorNode<S>& n) mutable {
                              if (!x.requires_grad()) return;
                              x.node()->ensure_grad();
                              ConstArrMap<S> y(n.data.data(), n.size());
                              x.grad_arr() += ConstArrMap<S>(n.grad.data(), n.size()) * (S(1) - y * y);
                            });
}

namespace detail_gelu {
inline constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kA = 0.044715;
}  // namespace detail_gelu

// tanh-form gelu.
template <typename S>
Tensor<S> gelu(Tensor<S> x) {
  using detail_gelu::kA;
  using detail_gelu::kC;
  std::vector<S> out(static_cast<size_t>(x.size()));
  const S* in = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(in[i]);
    out[static_cast<size_t>(i)] =
        static_cast<S>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {x}, [x](detail::TensorNode<S>& n) mutable {
        using detail_gelu::kA;
        using detail_gelu::kC;
        if (!x.requires_grad()) return;
        x.node()->ensure_grad();
        const S* in = x.data();
        const S* gy = n.grad.data();
        S* gx = x.grad();
        for (int64_t i = 0; i < n.size(); ++i) {
          const double v = static_cast<double>(in[i]);
          const double u = kC * (v + kA * v * v * v);
          const double t = std::tanh(u);
          const double du = kC * (1.0 + 3.0 * kA * v * v);
          const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
          gx[i] += gy[i] * static_cast<S>(d);
        }
      });
}

// Row-wise layer normalization over the last axis with affine parameters.
template <typename S>
Tensor<S> layer_norm(Tensor<S> x, Tensor<S> gamma, Tensor<S> beta, S eps = S(1e-5)) {
  const int r = x.rows(), c = x.cols();
  if (gamma.size() != c || beta.size() != c)
    throw DimensionError("layer_norm: parameter shape " + shape_str(gamma.shape()) +
                         " does not match feature width " + std::to_string(c));
  std::vector<S> out(static_cast<size_t>(x.size()));
  auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(x.size()));
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(r));
  const S* in = x.data();
  const S* g = gamma.data();
  const S* b = beta.data();
  for (int i = 0; i < r; ++i) {
    const S* row = in + static_cast<size_t>(i) * c;
    S mean = S(0);
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<S>(c);
    S var = S(0);
    for (int j = 0; j < c; ++j) {
      const S d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<S>(c);
    const S istd = S(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(i)] = istd;
    for (int j = 0; j < c; ++j) {
      const size_t at = static_cast<size_t>(i) * c + j;
      const S xh = (row[j] - mean) * istd;
      (*xhat)[at] = xh;
      out[at] = g[j] * xh + b[j];
    }
  }
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, r, c](detail::TensorNode<S>& n) mutable {
        const S* gy = n.grad.data();
        const S* g = gamma.data();
        if (x.requires_grad()) {
          x.node()->ensure_grad();
          S* gx = x.grad();
          for (int i = 0; i < r; ++i) {
            const size_t base = static_cast<size_t>(i) * c;
            S sum_h = S(0), sum_hx = S(0);
            for (int j = 0; j < c; ++j) {
              const S h = gy[base + j] * g[j];
              sum_h += h;
              sum_hx += h * (*xhat)[base + j];
            }
            const S mh = sum_h / static_cast<S>(c);
            const S mhx = sum_hx / static_cast<S>(c);
            const S istd = (*inv_std)[static_cast<size_t>(i)];
            for (int j = 0; j < c; ++j) {
              const S h = gy[base + j] * g[j];
              gx[base + j] += istd * (h - mh - (*xhat)[base + j] * mhx);
            }
          }
        }
        if (gamma.requires_grad()) {
          gamma.node()->ensure_grad();
          S* gg = gamma.grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              gg[j] += gy[static_cast<size_t>(i) * c + j] * (*xhat)[static_cast<size_t>(i) * c + j];
        }
        if (beta.requires_grad()) {
          beta.node()->ensure_grad();
          S* gb = beta.grad();
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gb[j] += gy[static_cast<size_t>(i) * c + j];
        }
      });
}

// Row gather from an embedding table.
template <typename S>
Tensor<S> embedding(Tensor<S> table, std::vector<int> ids) {
  const int v = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= v)
      throw IndexError("embedding: token id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(v) + ")");
  const int n = static_cast<int>(ids.size());
  std::vector<S> out(static_cast<size_t>(n) * d);
  const S* tab = table.data();
  for (int i = 0; i < n; ++i)
    std::copy_n(tab + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  return Tensor<S>::make_op({n, d}, std::move(out), {table},
                            [table, ids = std::move(ids), d](detail::TensorNode<S>& n) mutable {
                              if (!table.requires_grad()) return;
                              table.node()->ensure_grad();
                              S* gt = table.grad();
                              const S* gy = n.grad.data();
                              for (size_t i = 0; i < ids.size(); ++i) {
                                S* dst = gt + static_cast<size_t>(ids[i]) * d;
                                const S* src = gy + i * d;
                                for (int j = 0; j < d; ++j) dst[j] += src[j];
                              }
                            });
}

template <typename S>
Tensor<S> concat_rows(std::vector<Tensor<S>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int c = parts[0].cols();
  int r = 0;
  for (auto& p : parts) {
    if (p.cols() != c)
      throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    r += p.rows();
  }
  std::vector<S> out;
  out.reserve(static_cast<size_t>(r) * c);
  for (auto& p : parts) out.insert(out.end(), p.data(), p.data() + p.size());
  std::vector<Tensor<S>> parents = parts;
  return Tensor<S>::make_op({r, c}, std::move(out), std::move(parents),
                            [parts, c](detail::TensorNode<S>& n) mutable {
                              const S* gy = n.grad.data();
                              size_t off = 0;
                              for (auto& p : parts) {
                                if (p.requires_grad()) {
                                  p.node()->ensure_grad();
                                  S* gp = p.grad();
                                  for (int64_t i = 0; i < p.size(); ++i) gp[i] += gy[off + i];
                                }
                                off += static_cast<size_t>(p.size());
                              }
                            });
}

template <typename S>
Tensor<S> concat_cols(std::vector<Tensor<S>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const int r = parts[0].rows();
  int c = 0;
  for (auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    c += p.cols();
  }
  std::vector<S> out(static_cast<size_t>(r) * c);
  int off = 0;
  for (auto& p : parts) {
    MatMap<S>(out.data(), r, c).middleCols(off, p.cols()) = p.mat();
    off += p.cols();
  }
  std::vector<Tensor<S>> parents = parts;
  return Tensor<S>::make_op({r, c}, std::move(out), std::move(parents),
                            [parts, r, c](detail::TensorNode<S>& n) mutable {
                              ConstMatMap<S> gy(n.grad.data(), r, c);
                              int off = 0;
                              for (auto& p : parts) {
                                if (p.requires_grad()) {
                                  p.node()->ensure_grad();
                                  p.grad_mat() += gy.middleCols(off, p.cols());
                                }
                                off += p.cols();
                              }
                            });
}

template <typename S>
Tensor<S> slice_rows(Tensor<S> x, int start, int len) {
  if (start < 0 || len < 0 || start + len > x.rows())
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + shape_str(x.shape()));
  const int c = x.cols();
  std::vector<S> out(x.data() + static_cast<size_t>(start) * c,
                     x.data() + static_cast<size_t>(start + len) * c);
  return Tensor<S>::make_op({len, c}, std::move(out), {x},
                            [x, start, len, c](detail::TensorNode<S>& n) mutable {
                              if (!x.requires_grad()) return;
                              x.node()->ensure_grad();
                              x.grad_mat().middleRows(start, len) +=
                                  ConstMatMap<S>(n.grad.data(), len, c);
                            });
}

template <typename S>
Tensor<S> slice_cols(Tensor<S> x, int start, int len) {
  if (start < 0 || len < 0 || start + len > x.cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of " + shape_str(x.shape()));
  const int r = x.rows();
  std::vector<S> out(static_cast<size_t>(r) * len);
  MatMap<S>(out.data(), r, len) = x.mat().middleCols(start, len);
  return Tensor<S>::make_op({r, len}, std::move(out), {x},
                            [x, start, len, r](detail::TensorNode<S>& n) mutable {
                              if (!x.requires_grad()) return;
                              x.node()->ensure_grad();
                              x.grad_mat().middleCols(start, len) +=
                                  ConstMatMap<S>(n.grad.data(), r, len);
                            });
}

template <typename S>
Tensor<S> reshape(Tensor<S> x, std::vector<int> shape) {
  if (Tensor<S>::count(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<S> out(x.data(), x.data() + x.size());
  return Tensor<S>::make_op(std::move(shape), std::move(out), {x},
                            [x](detail::TensorNode<S>& n) mutable {
                              if (!x.requires_grad()) return;
                              x.node()->ensure_grad();
                              x.grad_arr() += ConstArrMap<S>(n.grad.data(), n.size());
                            });
}

template <typename S>
Tensor<S> sum(Tensor<S> x) {
  S total = S(0);
  const S* in = x.data();
  for (int64_t i = 0; i < x.size(); ++i) total += in[i];
  return Tensor<S>::make_op({1}, {total}, {x}, [x](detail::TensorNode<S>& n) mutable {
    if (!x.requires_grad()) return;
    x.node()->ensure_grad();
    x.grad_arr() += n.grad[0];
  });
}

namespace detail_ce {
template <typename S>
inline S row_ce_forward(const S* row, int v, int target, S* workspace_max) {
  S m = row[0];
  for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
  S sum = S(0);
  for (int j = 0; j < v; ++j) sum += std::exp(row[j] - m);
  *workspace_max = m;
  return m + std::log(sum) - row[target];
}
}  // namespace detail_ce

// -log softmax(logits)[target] for a single logit vector.
template <typename S>
Tensor<S> cross_entropy(Tensor<S> logits, int target) {
  const int v = static_cast<int>(logits.size());
  if (logits.rows() != 1)
    throw DimensionError("cross_entropy: expected a single logit row, got " +
                         shape_str(logits.shape()));
  if (target < 0 || target >= v)
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range [0, " +
                     std::to_string(v) + ")");
  S m;
  const S loss = detail_ce::row_ce_forward(logits.data(), v, target, &m);
  return Tensor<S>::make_op({1}, {loss}, {logits},
                            [logits, target, v](detail::TensorNode<S>& n) mutable {
                              if (!logits.requires_grad()) return;
                              logits.node()->ensure_grad();
                              const S g = n.grad[0];
                              const S* row = logits.data();
                              S m = row[0];
                              for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
                              S sum = S(0);
                              for (int j = 0; j < v; ++j) sum += std::exp(row[j] - m);
                              const S inv = S(1) / sum;
                              S* gx = logits.grad();
                              for (int j = 0; j < v; ++j)
                                gx[j] += g * std::exp(row[j] - m) * inv;
                              gx[target] -= g;
                            });
}

// Weighted sum of per-row cross-entropies: sum_s w_s * (-log softmax(L_s)[t_s]).
// Rows with weight 0 are skipped entirely, so their targets may be invalid;
// this carries the loss masking for positions past the sequence end.
template <typename S>
Tensor<S> cross_entropy_rows(Tensor<S> logits, std::vector<int> targets, std::vector<S> weights) {
  const int r = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != r || static_cast<int>(weights.size()) != r)
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(r) + " rows");
  S total = S(0);
  const S* in = logits.data();
  for (int i = 0; i < r; ++i) {
    if (weights[static_cast<size_t>(i)] == S(0)) continue;
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= v)
      throw IndexError("cross_entropy_rows: target " + std::to_string(t) + " out of range [0, " +
                       std::to_string(v) + ") at row " + std::to_string(i));
    S m;
    total += weights[static_cast<size_t>(i)] *
             detail_ce::row_ce_forward(in + static_cast<size_t>(i) * v, v, t, &m);
  }
  return Tensor<S>::make_op(
      {1}, {total}, {logits},
      [logits, targets = std::move(targets), weights = std::move(weights), r,
       v](detail::TensorNode<S>& n) mutable {
        if (!logits.requires_grad()) return;
        logits.node()->ensure_grad();
        const S g = n.grad[0];
        const S* in = logits.data();
        S* gx = logits.grad();
        for (int i = 0; i < r; ++i) {
          const S w = weights[static_cast<size_t>(i)];
          if (w == S(0)) continue;
          const S* row = in + static_cast<size_t>(i) * v;
          S* grow = gx + static_cast<size_t>(i) * v;
          S m = row[0];
          for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
          S sum = S(0);
          for (int j = 0; j < v; ++j) sum += std::exp(row[j] - m);
          const S inv = S(1) / sum;
          const S gw = g * w;
          for (int j = 0; j < v; ++j) grow[j] += gw * std::exp(row[j] - m) * inv;
          grow[targets[static_cast<size_t>(i)]] -= gw;
        }
      });
}

// Reads, for every bias entity and decode step, the logit each head assigns
// to the entity's aligned token. heads[k] is the S x V logit matrix of head
// k+1; tokens is the row-major M x K aligned token table. Output row
// (s * M + m) holds the K-vector for entity m at step s.
template <typename S>
Tensor<S> entity_gather(std::vector<Tensor<S>> heads, std::vector<int> tokens, int m_entities) {
  const int k = static_cast<int>(heads.size());
  if (k == 0) throw DimensionError("entity_gather: no head logits");
  const int s = heads[0].rows(), v = heads[0].cols();
  for (auto& h : heads)
    if (h.rows() != s || h.cols() != v)
      throw DimensionError("entity_gather: head shape mismatch " + shape_str(h.shape()));
  if (static_cast<int>(tokens.size()) != m_entities * k)
    throw DimensionError("entity_gather: token table size " + std::to_string(tokens.size()) +
                         " != M*K");
  for (int id : tokens)
    if (id < 0 || id >= v)
      throw IndexError("entity_gather: token id " + std::to_string(id) + " out of range");
  std::vector<S> out(static_cast<size_t>(s) * m_entities * k);
  for (int step = 0; step < s; ++step)
    for (int m = 0; m < m_entities; ++m)
      for (int h = 0; h < k; ++h)
        out[(static_cast<size_t>(step) * m_entities + m) * k + h] =
            heads[static_cast<size_t>(h)](step, tokens[static_cast<size_t>(m) * k + h]);
  std::vector<Tensor<S>> parents = heads;
  return Tensor<S>::make_op(
      {s * m_entities, k}, std::move(out), std::move(parents),
      [heads, tokens = std::move(tokens), m_entities, s, k](detail::TensorNode<S>& n) mutable {
        const S* gy = n.grad.data();
        for (int h = 0; h < k; ++h) {
          if (!heads[static_cast<size_t>(h)].requires_grad()) continue;
          heads[static_cast<size_t>(h)].node()->ensure_grad();
        }
        for (int step = 0; step < s; ++step)
          for (int m = 0; m < m_entities; ++m)
            for (int h = 0; h < k; ++h) {
              auto& head = heads[static_cast<size_t>(h)];
              if (!head.requires_grad()) continue;
              head.grad()[static_cast<size_t>(step) * head.cols() +
                          tokens[static_cast<size_t>(m) * k + h]] +=
                  gy[(static_cast<size_t>(step) * m_entities + m) * k + h];
            }
      });
}

}  // namespace mtpbias::ops
