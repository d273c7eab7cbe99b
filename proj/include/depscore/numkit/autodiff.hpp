// Copyright 2026 The depscore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over a fixed set of matrix operations.
//
// A Tape records every operation applied to its Vars. backward() walks the
// record in reverse and accumulates adjoints into every node that depends on
// a parameter. Composite computations (kernel regression, MLPs, losses) are
// built from the primitives below; there is no operator overloading and no
// dynamic graph pruning.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "depscore/errors.hpp"
#include "depscore/numkit/matrix.hpp"

namespace depscore::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the Tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf.
  Var param(Matrix value) { return push(std::move(value), true, {}); }
  /// Leaf that never receives a gradient.
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Adjoint accumulator for node `id`; only call when requires_grad(id).
  Matrix& grad_mut(std::size_t id) { return nodes_[id].grad; }

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1 × 1.
  void backward(Var root) {
    const Matrix& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw StructuralError("Tape::backward: root must be 1x1, got " + rv.shape_string());
    }
    if (!std::isfinite(rv(0, 0))) throw NumericError("Tape::backward: non-finite loss");
    for (std::size_t i = 0; i <= root.id; ++i) {
      Node& n = nodes_[i];
      if (n.requires_grad) n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad(0, 0) = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }

namespace detail {

inline void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw StructuralError("ad: operands live on different tapes");
}

inline bool any_grad(Var a) { return a.tape->requires_grad(a.id); }
inline bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  Matrix out = depscore::matmul(a.value(), b.value());
  return a.tape->push(std::move(out), detail::any_grad(a, b), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad_mut(a.id) += matmul_nt(g, t.value(b.id));
    if (t.requires_grad(b.id)) t.grad_mut(b.id) += matmul_tn(t.value(a.id), g);
  });
}

inline Var transpose(Var a) {
  return a.tape->push(depscore::transpose(a.value()), detail::any_grad(a),
                      [a](Tape& t, std::size_t self) {
                        t.grad_mut(a.id) += depscore::transpose(t.grad(self));
                      });
}

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  a.value().require_same_shape(b.value(), "ad::add");
  return a.tape->push(a.value() + b.value(), detail::any_grad(a, b),
                      [a, b](Tape& t, std::size_t self) {
                        if (t.requires_grad(a.id)) t.grad_mut(a.id) += t.grad(self);
                        if (t.requires_grad(b.id)) t.grad_mut(b.id) += t.grad(self);
                      });
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  a.value().require_same_shape(b.value(), "ad::sub");
  return a.tape->push(a.value() - b.value(), detail::any_grad(a, b),
                      [a, b](Tape& t, std::size_t self) {
                        if (t.requires_grad(a.id)) t.grad_mut(a.id) += t.grad(self);
                        if (t.requires_grad(b.id)) t.grad_mut(b.id) -= t.grad(self);
                      });
}

/// a + bias, where bias is 1 × cols and is broadcast over rows.
inline Var add_row(Var a, Var bias) {
  detail::check_same_tape(a, bias);
  return a.tape->push(add_row_broadcast(a.value(), bias.value()), detail::any_grad(a, bias),
                      [a, bias](Tape& t, std::size_t self) {
                        const Matrix& g = t.grad(self);
                        if (t.requires_grad(a.id)) t.grad_mut(a.id) += g;
                        if (t.requires_grad(bias.id)) {
                          Matrix& gb = t.grad_mut(bias.id);
                          for (std::size_t i = 0; i < g.rows(); ++i)
                            for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
                        }
                      });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  return a.tape->push(hadamard(a.value(), b.value()), detail::any_grad(a, b),
                      [a, b](Tape& t, std::size_t self) {
                        const Matrix& g = t.grad(self);
                        if (t.requires_grad(a.id)) t.grad_mut(a.id) += hadamard(g, t.value(b.id));
                        if (t.requires_grad(b.id)) t.grad_mut(b.id) += hadamard(g, t.value(a.id));
                      });
}

inline Var scale(Var a, double s) {
  return a.tape->push(a.value() * s, detail::any_grad(a), [a, s](Tape& t, std::size_t self) {
    t.grad_mut(a.id) += t.grad(self) * s;
  });
}

inline Var relu(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.tape->push(std::move(out), detail::any_grad(a), [a](Tape& t, std::size_t self) {
    const auto x = t.value(a.id).values();
    const auto g = t.grad(self).values();
    auto ga = t.grad_mut(a.id).values();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

inline Var exp(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  return a.tape->push(std::move(out), detail::any_grad(a), [a](Tape& t, std::size_t self) {
    const auto y = t.value(self).values();
    const auto g = t.grad(self).values();
    auto ga = t.grad_mut(a.id).values();
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * y[i];
  });
}

inline Var log(Var a) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::log(v);
  return a.tape->push(std::move(out), detail::any_grad(a), [a](Tape& t, std::size_t self) {
    const auto x = t.value(a.id).values();
    const auto g = t.grad(self).values();
    auto ga = t.grad_mut(a.id).values();
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] / x[i];
  });
}

/// Clamp into [lo, hi]; the gradient is passed through strictly inside the range.
inline Var clamp(Var a, double lo, double hi) {
  Matrix out = a.value();
  for (double& v : out.values()) v = std::min(hi, std::max(lo, v));
  return a.tape->push(std::move(out), detail::any_grad(a), [a, lo, hi](Tape& t, std::size_t self) {
    const auto x = t.value(a.id).values();
    const auto g = t.grad(self).values();
    auto ga = t.grad_mut(a.id).values();
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > lo && x[i] < hi) ga[i] += g[i];
  });
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xr = x.row(i);
    auto yr = out.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : xr) m = std::max(m, v);
    double z = 0.0;
    for (std::size_t j = 0; j < xr.size(); ++j) {
      yr[j] = std::exp(xr[j] - m);
      z += yr[j];
    }
    for (double& v : yr) v /= z;
  }
  return a.tape->push(std::move(out), detail::any_grad(a), [a](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_mut(a.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const auto yr = y.row(i);
      const auto gr = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto gar = ga.row(i);
      for (std::size_t j = 0; j < yr.size(); ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  });
}

/// Mean of all entries, as a 1 × 1 node.
inline Var mean_all(Var a) {
  const auto v = a.value().values();
  if (v.empty()) throw StructuralError("ad::mean_all: empty input");
  double s = 0.0;
  for (double x : v) s += x;
  const double n = static_cast<double>(v.size());
  return a.tape->push(Matrix(1, 1, s / n), detail::any_grad(a), [a, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0) / n;
    for (double& x : t.grad_mut(a.id).values()) x += g;
  });
}

/// Mean over all entries of (a − b)².
inline Var mse(Var a, Var b) {
  detail::check_same_tape(a, b);
  a.value().require_same_shape(b.value(), "ad::mse");
  const auto av = a.value().values();
  const auto bv = b.value().values();
  if (av.empty()) throw StructuralError("ad::mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double n = static_cast<double>(av.size());
  return a.tape->push(Matrix(1, 1, s / n), detail::any_grad(a, b),
                      [a, b, n](Tape& t, std::size_t self) {
                        const double g = t.grad(self)(0, 0) * 2.0 / n;
                        const auto x = t.value(a.id).values();
                        const auto y = t.value(b.id).values();
                        if (t.requires_grad(a.id)) {
                          auto ga = t.grad_mut(a.id).values();
                          for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g * (x[i] - y[i]);
                        }
                        if (t.requires_grad(b.id)) {
                          auto gb = t.grad_mut(b.id).values();
                          for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= g * (x[i] - y[i]);
                        }
                      });
}

/// Huber penalty ρ_δ(u) = u²/2 for |u| ≤ δ, δ(|u| − δ/2) otherwise.
inline double huber_value(double u, double delta) {
  const double a = std::abs(u);
  return a <= delta ? 0.5 * u * u : delta * (a - 0.5 * delta);
}

inline double huber_derivative(double u, double delta) {
  if (u > delta) return delta;
  if (u < -delta) return -delta;
  return u;
}

/// (1/rows) Σ_ik ρ_δ(a_ik − b_ik): summed over columns, averaged over rows.
inline Var huber(Var a, Var b, double delta) {
  detail::check_same_tape(a, b);
  a.value().require_same_shape(b.value(), "ad::huber");
  if (a.rows() == 0) throw StructuralError("ad::huber: empty input");
  const auto av = a.value().values();
  const auto bv = b.value().values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += huber_value(av[i] - bv[i], delta);
  const double n = static_cast<double>(a.rows());
  return a.tape->push(Matrix(1, 1, s / n), detail::any_grad(a, b),
                      [a, b, n, delta](Tape& t, std::size_t self) {
                        const double g = t.grad(self)(0, 0) / n;
                        const auto x = t.value(a.id).values();
                        const auto y = t.value(b.id).values();
                        for (std::size_t i = 0; i < x.size(); ++i) {
                          const double d = g * huber_derivative(x[i] - y[i], delta);
                          if (t.requires_grad(a.id)) t.grad_mut(a.id).values()[i] += d;
                          if (t.requires_grad(b.id)) t.grad_mut(b.id).values()[i] -= d;
                        }
                      });
}

}  // namespace depscore::ad
