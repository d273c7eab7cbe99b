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

// Frozen conditional-mean predictors.
//
// Every predictor answers the same question: given latent context rows Z_C and
// query rows z, estimate E[Z_j | Z_{-j} = z_{-j}] from the context alone.
// Nothing is ever learned across calls.
//
//   kernel_icr  softmax-weighted (Nadaraya–Watson) regression over the context,
//               differentiable w.r.t. queries and context.
//   cart        regression tree fit on the context, cached per (j, context).
//   external    newline-delimited JSON to a child process or TCP peer.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "depscore/errors.hpp"
#include "depscore/external_client.hpp"
#include "depscore/numkit/autodiff.hpp"
#include "depscore/numkit/matrix.hpp"

namespace depscore {

struct KernelIcr {
  /// Softmax temperature; 0 selects max(1, p − 1).
  double temperature = 0.0;
};

struct Cart {
  std::size_t max_depth = 8;
  std::size_t min_leaf = 5;
};

struct External {
  /// Shell command speaking the protocol on stdio, or "tcp://host:port".
  std::string endpoint;
  double timeout_s = 60.0;
};

using PredictorKind = std::variant<KernelIcr, Cart, External>;

inline std::string kind_name(const PredictorKind& k) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, KernelIcr>) return "kernel";
        else if constexpr (std::is_same_v<T, Cart>) return "cart";
        else return "external";
      },
      k);
}

inline bool supports_gradient(const PredictorKind& k) { return std::holds_alternative<KernelIcr>(k); }

inline nlohmann::json kind_to_json(const PredictorKind& k) {
  nlohmann::json j;
  j["kind"] = kind_name(k);
  if (const auto* ki = std::get_if<KernelIcr>(&k)) j["temperature"] = ki->temperature;
  if (const auto* c = std::get_if<Cart>(&k)) {
    j["max_depth"] = c->max_depth;
    j["min_leaf"] = c->min_leaf;
  }
  if (const auto* e = std::get_if<External>(&k)) {
    j["endpoint"] = e->endpoint;
    j["timeout_s"] = e->timeout_s;
  }
  return j;
}

inline PredictorKind kind_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "kernel") return KernelIcr{j.value("temperature", 0.0)};
  if (kind == "cart") return Cart{j.value("max_depth", std::size_t{8}), j.value("min_leaf", std::size_t{5})};
  if (kind == "external") return External{j.at("endpoint").get<std::string>(), j.value("timeout_s", 60.0)};
  throw ConfigError("unknown predictor kind '" + kind + "'");
}

/// Predict column `target_dim` of `queries` from the remaining columns,
/// conditioning on `context`. Column target_dim of `queries` is ignored.
struct ConditionalQuery {
  std::size_t target_dim;
  const Matrix& context;
  const Matrix& queries;

  void validate() const {
    if (context.rows() == 0) throw StructuralError("conditional query: empty context");
    if (context.cols() != queries.cols())
      throw StructuralError("conditional query: context has " + std::to_string(context.cols()) +
                            " columns, queries have " + std::to_string(queries.cols()));
    if (target_dim >= context.cols())
      throw StructuralError("conditional query: target_dim " + std::to_string(target_dim) +
                            " out of range for p = " + std::to_string(context.cols()));
  }
};

// ---------------------------------------------------------------------------
// Kernel in-context regression

inline double kernel_temperature(const KernelIcr& k, std::size_t p) {
  if (k.temperature > 0.0) return k.temperature;
  return std::max(1.0, static_cast<double>(p) - 1.0);
}

namespace detail {

/// Softmax weights over context rows for one query, and the weighted mean.
inline double kernel_row(std::span<const double> z, const Matrix& ctx, std::size_t j, double tau,
                         std::vector<double>& w) {
  const std::size_t n = ctx.rows();
  const std::size_t p = ctx.cols();
  w.resize(n);
  double max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) {
    const auto cr = ctx.row(c);
    double d = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      if (k == j) continue;
      const double diff = z[k] - cr[k];
      d += diff * diff;
    }
    w[c] = -d / tau;
    max_logit = std::max(max_logit, w[c]);
  }
  double zsum = 0.0;
  for (double& v : w) {
    v = std::exp(v - max_logit);
    zsum += v;
  }
  double mean = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    w[c] /= zsum;
    mean += w[c] * ctx(c, j);
  }
  return mean;
}

}  // namespace detail

inline std::vector<double> kernel_conditional_mean(const KernelIcr& kind, const ConditionalQuery& q) {
  q.validate();
  const double tau = kernel_temperature(kind, q.context.cols());
  std::vector<double> out(q.queries.rows());
  std::vector<double> w;
  for (std::size_t i = 0; i < q.queries.rows(); ++i)
    out[i] = detail::kernel_row(q.queries.row(i), q.context, q.target_dim, tau, w);
  return out;
}

/// Same estimator as kernel_conditional_mean, recorded on a tape as one node
/// so gradients reach both the query and the context latents. Returns m × 1.
inline ad::Var kernel_conditional_mean(ad::Var queries, ad::Var context, std::size_t j, double tau) {
  const std::size_t p = queries.cols();
  const std::size_t m = queries.rows();
  const std::size_t n = context.rows();
  if (context.cols() != p) throw StructuralError("kernel_conditional_mean: column mismatch");
  if (n == 0) throw StructuralError("kernel_conditional_mean: empty context");
  if (j >= p) throw StructuralError("kernel_conditional_mean: target_dim out of range");
  ad::detail::check_same_tape(queries, context);

  auto weights = std::make_shared<Matrix>(m, n);
  Matrix out(m, 1);
  std::vector<double> w;
  for (std::size_t i = 0; i < m; ++i) {
    out(i, 0) = detail::kernel_row(queries.value().row(i), context.value(), j, tau, w);
    std::copy(w.begin(), w.end(), weights->row(i).begin());
  }

  return queries.tape->push(
      std::move(out), ad::detail::any_grad(queries, context),
      [queries, context, j, tau, weights](ad::Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& q = queries.value();
        const Matrix& c = context.value();
        const Matrix& mean = t.value(self);
        const std::size_t m = q.rows(), n = c.rows(), p = q.cols();
        // a_ic = g_i · w_ic · (c_cj − mean_i) is the adjoint of logit_ic.
        Matrix a(m, n);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t r = 0; r < n; ++r) a(i, r) = g(i, 0) * (*weights)(i, r) * (c(r, j) - mean(i, 0));
        const double s = 2.0 / tau;
        if (t.requires_grad(queries.id)) {
          Matrix& dq = t.grad_mut(queries.id);
          const Matrix ac = matmul(a, c);
          for (std::size_t i = 0; i < m; ++i) {
            double row_sum = 0.0;
            for (std::size_t r = 0; r < n; ++r) row_sum += a(i, r);
            for (std::size_t k = 0; k < p; ++k)
              if (k != j) dq(i, k) -= s * (q(i, k) * row_sum - ac(i, k));
          }
        }
        if (t.requires_grad(context.id)) {
          Matrix& dc = t.grad_mut(context.id);
          const Matrix aq = matmul_tn(a, q);
          for (std::size_t r = 0; r < n; ++r) {
            double col_sum = 0.0, w_sum = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
              col_sum += a(i, r);
              w_sum += g(i, 0) * (*weights)(i, r);
            }
            for (std::size_t k = 0; k < p; ++k)
              if (k != j) dc(r, k) += s * (aq(r, k) - c(r, k) * col_sum);
            dc(r, j) += w_sum;
          }
        }
      });
}

/// Analytic derivatives of each query's kernel mean.
struct KernelGradient {
  Matrix d_query;                 ///< m × p: ∂mean_i / ∂query_i (column j is zero)
  std::vector<Matrix> d_context;  ///< per query, |C| × p: ∂mean_i / ∂context
};

inline KernelGradient kernel_conditional_mean_grad(const KernelIcr& kind, const ConditionalQuery& q) {
  q.validate();
  const std::size_t p = q.context.cols();
  const std::size_t n = q.context.rows();
  const std::size_t j = q.target_dim;
  const double tau = kernel_temperature(kind, p);
  KernelGradient g;
  g.d_query = Matrix(q.queries.rows(), p);
  std::vector<double> w;
  for (std::size_t i = 0; i < q.queries.rows(); ++i) {
    const auto z = q.queries.row(i);
    const double mean = detail::kernel_row(z, q.context, j, tau, w);
    Matrix dc(n, p);
    for (std::size_t c = 0; c < n; ++c) {
      // ∂mean/∂logit_c = w_c (y_c − mean); ∂logit_c/∂z_k = −2 (z_k − c_k) / τ.
      const double a = w[c] * (q.context(c, j) - mean);
      for (std::size_t k = 0; k < p; ++k) {
        if (k == j) continue;
        const double diff = z[k] - q.context(c, k);
        g.d_query(i, k) += a * (-2.0 * diff / tau);
        dc(c, k) = a * (2.0 * diff / tau);
      }
      dc(c, j) = w[c];
    }
    g.d_context.push_back(std::move(dc));
  }
  return g;
}

// ---------------------------------------------------------------------------
// CART regression tree

class RegressionTree {
 public:
  struct Node {
    int feature = -1;  ///< −1 marks a leaf
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    double value = 0.0;
  };

  /// Variance-reduction splits. Equal gains resolve to the lowest feature
  /// index, then the lowest threshold.
  static RegressionTree fit(const Matrix& x, std::span<const double> y, const Cart& cfg) {
    if (x.rows() == 0 || x.rows() != y.size()) throw StructuralError("RegressionTree::fit: bad shapes");
    RegressionTree tree;
    std::vector<std::size_t> idx = iota_of(x.rows());
    tree.grow(x, y, idx, 0, cfg);
    return tree;
  }

  double predict(std::span<const double> x) const {
    std::size_t at = 0;
    while (nodes_[at].feature >= 0) {
      const Node& n = nodes_[at];
      at = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes_[at].value;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t depth() const { return depth_from(0); }

 private:
  static std::vector<std::size_t> iota_of(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
  }

  std::size_t depth_from(std::size_t at) const {
    if (nodes_[at].feature < 0) return 0;
    return 1 + std::max(depth_from(nodes_[at].left), depth_from(nodes_[at].right));
  }

  std::size_t grow(const Matrix& x, std::span<const double> y, std::vector<std::size_t>& idx,
                   std::size_t depth, const Cart& cfg) {
    const std::size_t self = nodes_.size();
    nodes_.emplace_back();
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i : idx) {
      sum += y[i];
      sumsq += y[i] * y[i];
    }
    const double n = static_cast<double>(idx.size());
    nodes_[self].value = sum / n;
    const double sse_parent = sumsq - sum * sum / n;
    const std::size_t min_leaf = std::max<std::size_t>(1, cfg.min_leaf);
    if (depth >= cfg.max_depth || idx.size() < 2 * min_leaf || x.cols() == 0) return self;

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 1e-12 * std::max(1.0, std::abs(sse_parent));
    std::vector<std::size_t> order;
    for (std::size_t f = 0; f < x.cols(); ++f) {
      order = idx;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
      double ls = 0.0, lsq = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const double v = y[order[k]];
        ls += v;
        lsq += v * v;
        const std::size_t nl = k + 1;
        const std::size_t nr = order.size() - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        const double a = x(order[k], f);
        const double b = x(order[k + 1], f);
        if (!(a < b)) continue;
        const double rs = sum - ls;
        const double rsq = sumsq - lsq;
        const double sse_l = lsq - ls * ls / static_cast<double>(nl);
        const double sse_r = rsq - rs * rs / static_cast<double>(nr);
        const double gain = sse_parent - sse_l - sse_r;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (a + b);
        }
      }
    }
    if (best_feature < 0) return self;

    std::vector<std::size_t> left, right;
    for (std::size_t i : idx)
      (x(i, static_cast<std::size_t>(best_feature)) <= best_threshold ? left : right).push_back(i);
    nodes_[self].feature = best_feature;
    nodes_[self].threshold = best_threshold;
    const std::size_t l = grow(x, y, left, depth + 1, cfg);
    const std::size_t r = grow(x, y, right, depth + 1, cfg);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  std::vector<Node> nodes_;
};

namespace detail {

/// Context rows in lexicographic order, so the fitted tree does not depend on
/// the order in which context rows were supplied.
inline Matrix canonical_rows(const Matrix& m) {
  std::vector<std::size_t> order(m.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = m.row(a);
    const auto rb = m.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return select_rows(m, order);
}

inline std::uint64_t fnv1a(std::span<const double> v, std::uint64_t h = 1469598103934665603ULL) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

/// Trees keyed on (target_dim, exact canonical context). A hit returns the
/// same tree a refit would produce.
class CartCache {
 public:
  explicit CartCache(Cart cfg) : cfg_(cfg) {}

  std::shared_ptr<const RegressionTree> tree_for(std::size_t j, const Matrix& context) {
    Matrix canon = detail::canonical_rows(context);
    const auto key = std::make_pair(j, detail::fnv1a(canon.values()));
    {
      std::lock_guard lock(mu_);
      auto [lo, hi] = cache_.equal_range(key);
      for (auto it = lo; it != hi; ++it)
        if (it->second.context == canon) return it->second.tree;
    }
    std::vector<double> target = canon.column(j);
    auto tree = std::make_shared<const RegressionTree>(
        RegressionTree::fit(drop_column(canon, j), target, cfg_));
    std::lock_guard lock(mu_);
    cache_.emplace(key, Entry{std::move(canon), tree});
    return tree;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

  const Cart& config() const noexcept { return cfg_; }

 private:
  struct Entry {
    Matrix context;
    std::shared_ptr<const RegressionTree> tree;
  };
  Cart cfg_;
  mutable std::mutex mu_;
  std::multimap<std::pair<std::size_t, std::uint64_t>, Entry> cache_;
};

inline std::vector<double> cart_conditional_mean(CartCache& cache, const ConditionalQuery& q) {
  q.validate();
  const auto tree = cache.tree_for(q.target_dim, q.context);
  std::vector<double> out(q.queries.rows());
  std::vector<double> feat(q.queries.cols() - 1);
  for (std::size_t i = 0; i < q.queries.rows(); ++i) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < q.queries.cols(); ++k)
      if (k != q.target_dim) feat[o++] = q.queries(i, k);
    out[i] = tree->predict(feat);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runtime predictor

/// A configured predictor plus the runtime state it needs (tree cache, bridge
/// connection). That state never changes any answer, so calls are logically const.
class Predictor {
 public:
  explicit Predictor(PredictorKind kind) : kind_(std::move(kind)) {
    if (const auto* c = std::get_if<Cart>(&kind_)) cart_ = std::make_unique<CartCache>(*c);
  }

  const PredictorKind& kind() const noexcept { return kind_; }
  bool supports_gradient() const noexcept { return depscore::supports_gradient(kind_); }

  std::vector<double> conditional_mean(const ConditionalQuery& q) const {
    q.validate();
    if (const auto* k = std::get_if<KernelIcr>(&kind_)) return kernel_conditional_mean(*k, q);
    if (cart_) return cart_conditional_mean(*cart_, q);
    return external_mean(q);
  }

  /// Differentiable path; only the kernel regressor provides one.
  ad::Var conditional_mean(ad::Var queries, ad::Var context, std::size_t j) const {
    const auto* k = std::get_if<KernelIcr>(&kind_);
    if (!k) throw ContractError("predictor '" + kind_name(kind_) + "' is not differentiable");
    return kernel_conditional_mean(queries, context, j, kernel_temperature(*k, queries.cols()));
  }

  KernelGradient conditional_mean_grad(const ConditionalQuery& q) const {
    const auto* k = std::get_if<KernelIcr>(&kind_);
    if (!k) throw ContractError("predictor '" + kind_name(kind_) + "' is not differentiable");
    return kernel_conditional_mean_grad(*k, q);
  }

 private:
  std::vector<double> external_mean(const ConditionalQuery& q) const {
    const auto& ext = std::get<External>(kind_);
    std::lock_guard lock(ext_mu_);
    if (!client_) client_ = std::make_unique<ExternalClient>(ext.endpoint, ext.timeout_s);
    return client_->cond_mean(q.target_dim, q.context, q.queries);
  }

  PredictorKind kind_;
  std::unique_ptr<CartCache> cart_;
  mutable std::mutex ext_mu_;
  mutable std::unique_ptr<ExternalClient> client_;
};

}  // namespace depscore
