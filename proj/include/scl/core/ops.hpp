#ifndef SCL_CORE_OPS_HPP
#define SCL_CORE_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scl/core/autograd.hpp"

namespace scl::ops {

namespace detail {

template <class T>
void require_rank(const Var<T>& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(v.shape()));
  }
}

template <class T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same(a, b, "add");
  Tensor<T> out = a.value();
  as_matrix(out).array() += as_matrix(b.value()).array();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.needs_grad(a.id)) as_matrix(t.grad(a.id)).array() += g.array();
    if (t.needs_grad(b.id)) as_matrix(t.grad(b.id)).array() += g.array();
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same(a, b, "sub");
  Tensor<T> out = a.value();
  as_matrix(out).array() -= as_matrix(b.value()).array();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.needs_grad(a.id)) as_matrix(t.grad(a.id)).array() += g.array();
    if (t.needs_grad(b.id)) as_matrix(t.grad(b.id)).array() -= g.array();
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same(a, b, "mul");
  Tensor<T> out = a.value();
  as_matrix(out).array() *= as_matrix(b.value()).array();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.needs_grad(a.id)) as_matrix(t.grad(a.id)).array() += g.array() * as_matrix(t.value(b.id)).array();
    if (t.needs_grad(b.id)) as_matrix(t.grad(b.id)).array() += g.array() * as_matrix(t.value(a.id)).array();
  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  as_matrix(out).array() *= c;
  return a.tape->push(std::move(out), {a}, [a, c](Tape<T>& t, std::size_t self) {
    as_matrix(t.grad(a.id)).array() += c * as_matrix(t.grad(self)).array();
  });
}

/// 1 - a, used by the recurrent cells.
template <class T>
Var<T> one_minus(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = T(1) - v;
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    as_matrix(t.grad(a.id)).array() -= as_matrix(t.grad(self)).array();
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const Tensor<T>& x = t.value(a.id);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(a.id);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = detail::stable_sigmoid(v);
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(a.id);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& ga = t.grad(a.id);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

/// Gradient reversal: identity forward, backward multiplies the incoming gradient by -lambda.
template <class T>
Var<T> gradient_reversal(Var<T> a, T lambda) {
  if (!(lambda >= T(0))) throw ValidationError("gradient reversal lambda must be >= 0, got " + std::to_string(lambda));
  return a.tape->push(a.value(), {a}, [a, lambda](Tape<T>& t, std::size_t self) {
    as_matrix(t.grad(a.id)).array() += (-lambda) * as_matrix(t.grad(self)).array();
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
    Tensor<T>& ga = t.grad(a.id);
    const Tensor<T>& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Blocks gradient flow; the value is copied as a constant.
template <class T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.value());
}

// ---------------------------------------------------------------------------
// Dense algebra
// ---------------------------------------------------------------------------

/// y = x W^T (+ b). x: [n, in], W: [out, in], b: [out].
template <class T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> b = std::nullopt) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " + shape_str(w.shape()));
  }
  Tensor<T> out({n, out_dim});
  auto y = as_matrix(out);
  y.noalias() = as_matrix(x.value()) * as_matrix(w.value()).transpose();
  if (b) y.rowwise() += as_matrix(b->value().data(), 1, out_dim).row(0);
  std::vector<Var<T>> parents{x, w};
  if (b) parents.push_back(*b);
  return x.tape->push(std::move(out), parents, [x, w, b, n, in, out_dim](Tape<T>& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.needs_grad(x.id)) as_matrix(t.grad(x.id)).noalias() += g * as_matrix(t.value(w.id));
    if (t.needs_grad(w.id)) as_matrix(t.grad(w.id)).noalias() += g.transpose() * as_matrix(t.value(x.id));
    if (b && t.needs_grad(b->id)) as_matrix(t.grad(b->id).data(), 1, out_dim) += g.colwise().sum();
    (void)n;
    (void)in;
  });
}

/// C = A B. A: [m, k], B: [k, n].
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    if (t.needs_grad(a.id)) as_matrix(t.grad(a.id)).noalias() += g * as_matrix(t.value(b.id)).transpose();
    if (t.needs_grad(b.id)) as_matrix(t.grad(b.id)).noalias() += as_matrix(t.value(a.id)).transpose() * g;
  });
}

/// Concatenates rank-2 inputs along columns.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != n) throw ShapeError("concat_cols: row count mismatch");
    total += p.dim(1);
  }
  Tensor<T> out({n, total});
  auto y = as_matrix(out);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    y.middleCols(off, p.dim(1)) = as_matrix(p.value());
    off += p.dim(1);
  }
  return parts.front().tape->push(std::move(out), parts, [parts, offsets](Tape<T>& t, std::size_t self) {
    const auto g = as_matrix(t.grad(self));
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!t.needs_grad(parts[i].id)) continue;
      as_matrix(t.grad(parts[i].id)) += g.middleCols(offsets[i], parts[i].dim(1));
    }
  });
}

/// Concatenates inputs along the first axis (all other dims must agree).
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape tail_a(shape.begin() + 1, shape.end()), tail_b(p.shape().begin() + 1, p.shape().end());
    if (tail_a != tail_b) throw ShapeError("concat_rows: trailing shape mismatch");
    rows += p.dim(0);
  }
  shape[0] = rows;
  Tensor<T> out(shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return parts.front().tape->push(std::move(out), parts, [parts](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t n = t.value(p.id).size();
      if (t.needs_grad(p.id)) {
        Tensor<T>& gp = t.grad(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t len) {
  detail::require_rank(x, 2, "slice_cols");
  if (start + len > x.dim(1)) throw ShapeError("slice_cols: range out of bounds");
  Tensor<T> out({x.dim(0), len});
  as_matrix(out) = as_matrix(x.value()).middleCols(start, len);
  return x.tape->push(std::move(out), {x}, [x, start, len](Tape<T>& t, std::size_t self) {
    as_matrix(t.grad(x.id)).middleCols(start, len) += as_matrix(t.grad(self));
  });
}

/// Selects rows of a rank-2 input: out[i] = x[index[i]]. Backward scatter-adds.
template <class T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> index) {
  detail::require_rank(x, 2, "gather_rows");
  const std::size_t d = x.dim(1);
  Tensor<T> out({index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.dim(0)) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.value().data() + index[i] * d, d, out.data() + i * d);
  }
  return x.tape->push(std::move(out), {x}, [x, index = std::move(index), d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (std::size_t k = 0; k < d; ++k) gx[index[i] * d + k] += g[i * d + k];
    }
  });
}

/// z[g*L + l] = x[g*L + l] + y[g] for x: [G*L, D], y: [G, D].
template <class T>
Var<T> broadcast_add_groups(Var<T> x, Var<T> y, std::size_t group_len) {
  detail::require_rank(x, 2, "broadcast_add_groups");
  detail::require_rank(y, 2, "broadcast_add_groups");
  const std::size_t groups = y.dim(0), d = y.dim(1);
  if (x.dim(0) != groups * group_len || x.dim(1) != d) throw ShapeError("broadcast_add_groups: shape mismatch");
  Tensor<T> out = x.value();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t l = 0; l < group_len; ++l)
      for (std::size_t k = 0; k < d; ++k) out[(g * group_len + l) * d + k] += y.value()[g * d + k];
  return x.tape->push(std::move(out), {x, y}, [x, y, groups, group_len, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gr = t.grad(self);
    if (t.needs_grad(x.id)) {
      Tensor<T>& gx = t.grad(x.id);
      for (std::size_t i = 0; i < gr.size(); ++i) gx[i] += gr[i];
    }
    if (t.needs_grad(y.id)) {
      Tensor<T>& gy = t.grad(y.id);
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t l = 0; l < group_len; ++l)
          for (std::size_t k = 0; k < d; ++k) gy[g * d + k] += gr[(g * group_len + l) * d + k];
    }
  });
}

/// Row-wise softmax over allowed entries of x: [G, L]. Masked entries get exactly 0.
/// Every row needs at least one allowed entry.
template <class T>
Var<T> masked_softmax(Var<T> x, std::vector<std::uint8_t> allowed) {
  detail::require_rank(x, 2, "masked_softmax");
  const std::size_t rows = x.dim(0), len = x.dim(1);
  if (allowed.size() != rows * len) throw ShapeError("masked_softmax: mask size mismatch");
  Tensor<T> out({rows, len});
  const Tensor<T>& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = T(0);
    bool any = false;
    for (std::size_t j = 0; j < len; ++j) {
      if (!allowed[r * len + j]) continue;
      mx = any ? std::max(mx, xv[r * len + j]) : xv[r * len + j];
      any = true;
    }
    if (!any) throw ValidationError("masked_softmax: every position of row " + std::to_string(r) + " is masked");
    T sum = T(0);
    for (std::size_t j = 0; j < len; ++j) {
      if (!allowed[r * len + j]) continue;
      out[r * len + j] = std::exp(xv[r * len + j] - mx);
      sum += out[r * len + j];
    }
    for (std::size_t j = 0; j < len; ++j) {
      if (allowed[r * len + j]) out[r * len + j] /= sum;
    }
  }
  return x.tape->push(std::move(out), {x}, [x, rows, len](Tape<T>& t, std::size_t self) {
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < len; ++j) dot += y[r * len + j] * g[r * len + j];
      for (std::size_t j = 0; j < len; ++j) gx[r * len + j] += y[r * len + j] * (g[r * len + j] - dot);
    }
  });
}

/// out[g] = sum_l w[g, l] * s[g*L + l] for w: [G, L], s: [G*L, D].
template <class T>
Var<T> weighted_sum_groups(Var<T> w, Var<T> s) {
  detail::require_rank(w, 2, "weighted_sum_groups");
  detail::require_rank(s, 2, "weighted_sum_groups");
  const std::size_t groups = w.dim(0), len = w.dim(1), d = s.dim(1);
  if (s.dim(0) != groups * len) throw ShapeError("weighted_sum_groups: shape mismatch");
  Tensor<T> out({groups, d});
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t l = 0; l < len; ++l) {
      const T wv = w.value()[g * len + l];
      for (std::size_t k = 0; k < d; ++k) out[g * d + k] += wv * s.value()[(g * len + l) * d + k];
    }
  return w.tape->push(std::move(out), {w, s}, [w, s, groups, len, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gr = t.grad(self);
    const Tensor<T>& wv = t.value(w.id);
    const Tensor<T>& sv = t.value(s.id);
    const bool gw_needed = t.needs_grad(w.id), gs_needed = t.needs_grad(s.id);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t l = 0; l < len; ++l) {
        if (gw_needed) {
          T acc = T(0);
          for (std::size_t k = 0; k < d; ++k) acc += gr[g * d + k] * sv[(g * len + l) * d + k];
          t.grad(w.id)[g * len + l] += acc;
        }
        if (gs_needed) {
          Tensor<T>& gs = t.grad(s.id);
          for (std::size_t k = 0; k < d; ++k) gs[(g * len + l) * d + k] += wv[g * len + l] * gr[g * d + k];
        }
      }
  });
}

/// Row-wise layer normalisation with affine parameters gamma/beta of width D.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out({n, d});
  std::vector<T> inv_std(n);
  Tensor<T> xhat({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    T mean = T(0);
    for (std::size_t k = 0; k < d; ++k) mean += x.value()[r * d + k];
    mean /= T(d);
    T var = T(0);
    for (std::size_t k = 0; k < d; ++k) {
      const T c = x.value()[r * d + k] - mean;
      var += c * c;
    }
    var /= T(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t k = 0; k < d; ++k) {
      xhat[r * d + k] = (x.value()[r * d + k] - mean) * inv_std[r];
      out[r * d + k] = xhat[r * d + k] * gamma.value()[k] + beta.value()[k];
    }
  }
  return x.tape->push(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, n, d, inv_std = std::move(inv_std), xhat = std::move(xhat)](Tape<T>& t,
                                                                                                 std::size_t self) {
                        const Tensor<T>& g = t.grad(self);
                        const Tensor<T>& gm = t.value(gamma.id);
                        if (t.needs_grad(gamma.id) || t.needs_grad(beta.id)) {
                          Tensor<T>& gg = t.grad(gamma.id);
                          Tensor<T>& gb = t.grad(beta.id);
                          for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t k = 0; k < d; ++k) {
                              gg[k] += g[r * d + k] * xhat[r * d + k];
                              gb[k] += g[r * d + k];
                            }
                        }
                        if (!t.needs_grad(x.id)) return;
                        Tensor<T>& gx = t.grad(x.id);
                        for (std::size_t r = 0; r < n; ++r) {
                          T sum_dy = T(0), sum_dy_xhat = T(0);
                          for (std::size_t k = 0; k < d; ++k) {
                            const T dy = g[r * d + k] * gm[k];
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat[r * d + k];
                          }
                          for (std::size_t k = 0; k < d; ++k) {
                            const T dy = g[r * d + k] * gm[k];
                            gx[r * d + k] += inv_std[r] / T(d) *
                                             (T(d) * dy - sum_dy - xhat[r * d + k] * sum_dy_xhat);
                          }
                        }
                      });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// Multi-head scaled dot-product attention over grouped sequences.
///
/// q: [G*Lq, D], k/v: [G*Lk, D]; heads split D evenly. `allowed[(g*Lq + i)*Lk + j]`
/// says whether query i of group g may attend key j. Disallowed keys are skipped
/// entirely, so their values cannot influence the output. When `weights_out` is
/// given, it receives the [G, heads, Lq, Lk] attention weights.
template <class T>
Var<T> dot_product_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t groups, std::size_t heads,
                             std::vector<std::uint8_t> allowed, Tensor<T>* weights_out = nullptr) {
  detail::require_rank(q, 2, "attention");
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads) throw ShapeError("attention: model dim not divisible by heads");
  const std::size_t lq = q.dim(0) / groups, lk = k.dim(0) / groups, dh = d / heads;
  if (q.dim(0) != groups * lq || k.dim(0) != groups * lk || v.shape() != k.shape() || k.dim(1) != d) {
    throw ShapeError("attention: inconsistent q/k/v shapes");
  }
  if (allowed.size() != groups * lq * lk) throw ShapeError("attention: mask size mismatch");
  const T scale = T(1) / std::sqrt(T(dh));
  Tensor<T> w({groups, heads, lq, lk});
  Tensor<T> out({groups * lq, d});
  const Tensor<T>& qv = q.value();
  const Tensor<T>& kv = k.value();
  const Tensor<T>& vv = v.value();
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < lq; ++i) {
        T* wrow = w.data() + ((g * heads + h) * lq + i) * lk;
        const std::uint8_t* mrow = allowed.data() + (g * lq + i) * lk;
        const T* qi = qv.data() + (g * lq + i) * d + h * dh;
        T mx = T(0);
        bool any = false;
        for (std::size_t j = 0; j < lk; ++j) {
          if (!mrow[j]) continue;
          const T* kj = kv.data() + (g * lk + j) * d + h * dh;
          T s = T(0);
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          wrow[j] = s * scale;
          mx = any ? std::max(mx, wrow[j]) : wrow[j];
          any = true;
        }
        if (!any) throw ValidationError("attention: query has no admissible key");
        T sum = T(0);
        for (std::size_t j = 0; j < lk; ++j) {
          if (!mrow[j]) continue;
          wrow[j] = std::exp(wrow[j] - mx);
          sum += wrow[j];
        }
        T* oi = out.data() + (g * lq + i) * d + h * dh;
        for (std::size_t j = 0; j < lk; ++j) {
          if (!mrow[j]) continue;
          wrow[j] /= sum;
          const T* vj = vv.data() + (g * lk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += wrow[j] * vj[c];
        }
      }
  if (weights_out) *weights_out = w;
  return q.tape->push(
      std::move(out), {q, k, v},
      [q, k, v, groups, heads, lq, lk, d, dh, scale, allowed = std::move(allowed), w = std::move(w)](
          Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& qv = t.value(q.id);
        const Tensor<T>& kv = t.value(k.id);
        const Tensor<T>& vv = t.value(v.id);
        Tensor<T>& gq = t.grad(q.id);
        Tensor<T>& gk = t.grad(k.id);
        Tensor<T>& gv = t.grad(v.id);
        std::vector<T> dw(lk);
        for (std::size_t gi = 0; gi < groups; ++gi)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < lq; ++i) {
              const T* wrow = w.data() + ((gi * heads + h) * lq + i) * lk;
              const std::uint8_t* mrow = allowed.data() + (gi * lq + i) * lk;
              const T* go = g.data() + (gi * lq + i) * d + h * dh;
              T dot = T(0);
              for (std::size_t j = 0; j < lk; ++j) {
                dw[j] = T(0);
                if (!mrow[j]) continue;
                const T* vj = vv.data() + (gi * lk + j) * d + h * dh;
                T* gvj = gv.data() + (gi * lk + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  dw[j] += go[c] * vj[c];
                  gvj[c] += wrow[j] * go[c];
                }
                dot += wrow[j] * dw[j];
              }
              const T* qi = qv.data() + (gi * lq + i) * d + h * dh;
              T* gqi = gq.data() + (gi * lq + i) * d + h * dh;
              for (std::size_t j = 0; j < lk; ++j) {
                if (!mrow[j]) continue;
                const T ds = wrow[j] * (dw[j] - dot) * scale;
                const T* kj = kv.data() + (gi * lk + j) * d + h * dh;
                T* gkj = gk.data() + (gi * lk + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  gqi[c] += ds * kj[c];
                  gkj[c] += ds * qi[c];
                }
              }
            }
      });
}

// ---------------------------------------------------------------------------
// Convolution and pooling (NCHW)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
};

template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) && ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? img[(c * g.height + iy) * g.width + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t cols = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            img[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution. x: [N, C, H, W], w: [Co, C, k, k], b: [Co].
/// Each sample is processed independently, so per-sample results do not depend on batch size.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c || w.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (h + 2 * pad < k || wd + 2 * pad < k || stride == 0) throw ShapeError("conv2d: input smaller than kernel");
  const detail::ConvGeometry geo{c, h, wd, k, stride, pad, (h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1};
  const std::size_t patch = c * k * k, cols = geo.out_h * geo.out_w;
  Tensor<T> out({n, co, geo.out_h, geo.out_w});
  AlignedVector<T> col(patch * cols);
  const auto wm = as_matrix(w.value().data(), co, patch);
  const auto bv = as_matrix(b.value().data(), co, 1);
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(x.value().data() + s * c * h * wd, geo, col.data());
    auto o = as_matrix(out.data() + s * co * cols, co, cols);
    o.noalias() = wm * as_matrix(static_cast<const T*>(col.data()), patch, cols);
    o.colwise() += bv.col(0);
  }
  return x.tape->push(std::move(out), {x, w, b}, [x, w, b, geo, n, co, patch, cols](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const bool need_x = t.needs_grad(x.id), need_w = t.needs_grad(w.id), need_b = t.needs_grad(b.id);
    AlignedVector<T> col(patch * cols), dcol(need_x ? patch * cols : 0);
    const std::size_t in_size = geo.channels * geo.height * geo.width;
    for (std::size_t s = 0; s < n; ++s) {
      const auto go = as_matrix(g.data() + s * co * cols, co, cols);
      if (need_w) {
        detail::im2col(t.value(x.id).data() + s * in_size, geo, col.data());
        as_matrix(t.grad(w.id).data(), co, patch).noalias() +=
            go * as_matrix(static_cast<const T*>(col.data()), patch, cols).transpose();
      }
      if (need_b) as_matrix(t.grad(b.id).data(), co, 1) += go.rowwise().sum();
      if (need_x) {
        as_matrix(dcol.data(), patch, cols).noalias() =
            as_matrix(t.value(w.id).data(), co, patch).transpose() * go;
        detail::col2im_add(dcol.data(), geo, t.grad(x.id).data() + s * in_size);
      }
    }
  });
}

/// Mean over spatial positions: [N, C, H, W] -> [N, C].
template <class T>
Var<T> global_avg_pool(Var<T> x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    T s = T(0);
    for (std::size_t p = 0; p < hw; ++p) s += x.value()[i * hw + p];
    out[i] = s / T(hw);
  }
  return x.tape->push(std::move(out), {x}, [x, n, c, hw](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += g[i] / T(hw);
  });
}

/// Adaptive average pooling to [N, C, oh, ow] using floor/ceil bin edges.
template <class T>
Var<T> adaptive_avg_pool(Var<T> x, std::size_t oh, std::size_t ow) {
  detail::require_rank(x, 4, "adaptive_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  struct Bin {
    std::size_t y0, y1, x0, x1;
  };
  std::vector<Bin> bins;
  for (std::size_t by = 0; by < oh; ++by)
    for (std::size_t bx = 0; bx < ow; ++bx)
      bins.push_back({by * h / oh, ((by + 1) * h + oh - 1) / oh, bx * w / ow, ((bx + 1) * w + ow - 1) / ow});
  Tensor<T> out({n, c, oh, ow});
  for (std::size_t i = 0; i < n * c; ++i)
    for (std::size_t bi = 0; bi < bins.size(); ++bi) {
      const Bin& bn = bins[bi];
      T s = T(0);
      for (std::size_t yy = bn.y0; yy < bn.y1; ++yy)
        for (std::size_t xx = bn.x0; xx < bn.x1; ++xx) s += x.value()[(i * h + yy) * w + xx];
      out[i * bins.size() + bi] = s / T((bn.y1 - bn.y0) * (bn.x1 - bn.x0));
    }
  return x.tape->push(std::move(out), {x}, [x, n, c, h, w, bins](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.grad(x.id);
    for (std::size_t i = 0; i < n * c; ++i)
      for (std::size_t bi = 0; bi < bins.size(); ++bi) {
        const Bin& bn = bins[bi];
        const T share = g[i * bins.size() + bi] / T((bn.y1 - bn.y0) * (bn.x1 - bn.x0));
        for (std::size_t yy = bn.y0; yy < bn.y1; ++yy)
          for (std::size_t xx = bn.x0; xx < bn.x1; ++xx) gx[(i * h + yy) * w + xx] += share;
      }
  });
}

// ---------------------------------------------------------------------------
// Losses (scalar outputs of shape [1])
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy on logits. `weights` (optional) scales each term and the
/// mean is taken over their sum; zero weights drop an element.
template <class T>
Var<T> bce_with_logits(Var<T> logits, const std::vector<T>& targets, const std::vector<T>& weights = {}) {
  const std::size_t n = logits.value().size();
  if (targets.size() != n) {
    throw ShapeError("bce: " + std::to_string(n) + " predictions vs " + std::to_string(targets.size()) + " labels");
  }
  if (!weights.empty() && weights.size() != n) throw ShapeError("bce: weight count mismatch");
  T total_w = T(0), loss = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits.value()[i], y = targets[i], wi = weights.empty() ? T(1) : weights[i];
    loss += wi * (std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z))));
    total_w += wi;
  }
  if (total_w <= T(0)) throw ValidationError("bce: no weighted elements");
  Tensor<T> out({1}, loss / total_w);
  return logits.tape->push(std::move(out), {logits}, [logits, targets, weights, n, total_w](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    Tensor<T>& gl = t.grad(logits.id);
    const Tensor<T>& z = t.value(logits.id);
    for (std::size_t i = 0; i < n; ++i) {
      const T wi = weights.empty() ? T(1) : weights[i];
      gl[i] += g * wi * (detail::stable_sigmoid(z[i]) - targets[i]) / total_w;
    }
  });
}

/// Mean squared error between a prediction of any shape and a flat target.
template <class T>
Var<T> mse(Var<T> pred, const std::vector<T>& target) {
  const std::size_t n = pred.value().size();
  if (target.size() != n) throw ShapeError("mse: length mismatch");
  T loss = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.value()[i] - target[i];
    loss += d * d;
  }
  Tensor<T> out({1}, loss / T(n));
  return pred.tape->push(std::move(out), {pred}, [pred, target, n](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    Tensor<T>& gp = t.grad(pred.id);
    for (std::size_t i = 0; i < n; ++i) gp[i] += g * T(2) * (t.value(pred.id)[i] - target[i]) / T(n);
  });
}

/// sum_i coeffs[i] * terms[i] over scalar terms.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) throw ShapeError("weighted_sum: bad arguments");
  T v = T(0);
  for (std::size_t i = 0; i < terms.size(); ++i) v += coeffs[i] * terms[i].value()[0];
  return terms.front().tape->push(Tensor<T>({1}, v), terms, [terms, coeffs](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (t.needs_grad(terms[i].id)) t.grad(terms[i].id)[0] += coeffs[i] * g;
    }
  });
}

}  // namespace scl::ops

#endif  // SCL_CORE_OPS_HPP
