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

// Heteroscedastic variance networks: one small MLP per latent dimension that
// maps z_{-j} to log σ̂²_j, fit by the Gaussian NLL of the dependency residual
// with encoder and predictor frozen.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "depscore/context.hpp"
#include "depscore/errors.hpp"
#include "depscore/latent.hpp"
#include "depscore/numkit/autodiff.hpp"
#include "depscore/numkit/optim.hpp"
#include "depscore/numkit/random.hpp"
#include "depscore/predictor.hpp"

namespace depscore {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct Dense {
  Matrix w;  ///< in × out
  Matrix b;  ///< 1 × out
  friend bool operator==(const Dense&, const Dense&) = default;
};

/// in → 64 → ReLU → dropout → 32 → ReLU → dropout → 1.
struct Mlp {
  std::vector<Dense> layers;
  double dropout = 0.1;

  std::size_t input_dim() const { return layers.front().w.rows(); }

  static Mlp make(std::size_t in, Rng& rng, std::vector<std::size_t> hidden = {64, 32},
                  double dropout = 0.1) {
    Mlp m;
    m.dropout = dropout;
    std::size_t fan_in = in;
    hidden.push_back(1);
    for (std::size_t out : hidden) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
      Dense l{Matrix(fan_in, out), Matrix(1, out)};
      for (double& v : l.w.values()) v = uniform(rng, -bound, bound);
      for (double& v : l.b.values()) v = uniform(rng, -bound, bound);
      m.layers.push_back(std::move(l));
      fan_in = out;
    }
    return m;
  }

  /// Raw (unclamped) output, dropout off.
  Matrix forward(const Matrix& x) const {
    Matrix h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = add_row_broadcast(matmul(h, layers[l].w), layers[l].b);
      if (l + 1 < layers.size())
        for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    }
    return h;
  }

  /// Tape version; `params` holds (w, b) per layer. With `rng` set, dropout
  /// masks are drawn after each hidden layer.
  ad::Var forward(ad::Tape& t, std::span<const ad::Var> params, ad::Var x, Rng* rng) const {
    ad::Var h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = ad::add_row(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
      if (l + 1 < layers.size()) {
        h = ad::relu(h);
        if (rng && dropout > 0.0) h = ad::mul(h, t.constant(dropout_mask(h.rows(), h.cols(), dropout, *rng)));
      }
    }
    return h;
  }

  std::vector<Matrix> parameters() const {
    std::vector<Matrix> p;
    for (const auto& l : layers) {
      p.push_back(l.w);
      p.push_back(l.b);
    }
    return p;
  }

  void set_parameters(std::vector<Matrix> p) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].w = std::move(p[2 * l]);
      layers[l].b = std::move(p[2 * l + 1]);
    }
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

struct VarianceModel {
  std::vector<Mlp> nets;  ///< one per latent dimension
  double log_var_min = kLogVarMin;
  double log_var_max = kLogVarMax;

  std::size_t p() const noexcept { return nets.size(); }
  friend bool operator==(const VarianceModel&, const VarianceModel&) = default;
};

struct VarTrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 1024;
  std::uint64_t seed = 0;
  /// Compute μ̂ once per training row instead of per batch. Results are identical.
  bool cache_mu = false;

  void validate() const {
    if (epochs == 0) throw ConfigError("VarTrainConfig: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("VarTrainConfig: batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("VarTrainConfig: lr must be > 0");
  }
};

/// mean over the batch of (z − μ̂)² / σ̂² + log σ̂².
inline double nll_loss(std::span<const double> z, std::span<const double> mu_hat,
                       std::span<const double> log_var) {
  if (z.size() != mu_hat.size() || z.size() != log_var.size())
    throw StructuralError("nll_loss: length mismatch");
  if (z.empty()) throw StructuralError("nll_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double r = z[i] - mu_hat[i];
    s += r * r * std::exp(-log_var[i]) + log_var[i];
  }
  return s / static_cast<double>(z.size());
}

/// Tape form of nll_loss for a fixed squared-residual column.
inline ad::Var nll_graph(ad::Tape& t, const Matrix& sq_residual, ad::Var log_var) {
  const ad::Var r2 = t.constant(sq_residual);
  return ad::mean_all(ad::add(ad::mul(r2, ad::exp(ad::scale(log_var, -1.0))), log_var));
}

/// Clamped log σ̂² for each row of `z_minus_j` (width p − 1). Dropout is off.
inline std::vector<double> predict_log_var(const VarianceModel& model, std::size_t j,
                                           const Matrix& z_minus_j) {
  if (j >= model.p()) throw StructuralError("predict_log_var: dimension out of range");
  if (z_minus_j.cols() != model.nets[j].input_dim())
    throw StructuralError("predict_log_var: expected " + std::to_string(model.nets[j].input_dim()) +
                          " inputs, got " + std::to_string(z_minus_j.cols()));
  const Matrix out = model.nets[j].forward(z_minus_j);
  std::vector<double> lv(out.rows());
  for (std::size_t i = 0; i < out.rows(); ++i)
    lv[i] = std::min(model.log_var_max, std::max(model.log_var_min, out(i, 0)));
  return lv;
}

/// Fits the variance net for dimension j. Reads nothing belonging to other dimensions.
inline Mlp train_variance_net(std::size_t j, const Matrix& train, const Matrix& x_ctx,
                              const EncoderModel& enc, const Predictor& pred,
                              const VarTrainConfig& cfg) {
  const std::size_t p = enc.p();
  const std::size_t n = train.rows();
  Rng rng = make_rng(cfg.seed, 0x7a40000 + j);
  Mlp net = Mlp::make(p - 1, rng);

  std::vector<double> cached_mu;
  if (cfg.cache_mu) cached_mu = pred.conditional_mean(ConditionalQuery{j, enc.encode(x_ctx), enc.encode(train)});

  AdamState adam{AdamConfig{0.9, 0.999, 1e-8, cfg.weight_decay}};
  std::vector<std::size_t> order = iota_indices(n);
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
      const Matrix zb = enc.encode(select_rows(train, idx));
      std::vector<double> mu;
      if (cfg.cache_mu) {
        for (std::size_t i : idx) mu.push_back(cached_mu[i]);
      } else {
        mu = pred.conditional_mean(ConditionalQuery{j, enc.encode(x_ctx), zb});
      }
      Matrix r2(idx.size(), 1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double r = zb(i, j) - mu[i];
        r2(i, 0) = r * r;
      }

      ad::Tape tape;
      std::vector<ad::Var> params;
      for (const Matrix& m : net.parameters()) params.push_back(tape.param(m));
      const ad::Var input = tape.constant(drop_column(zb, j));
      const ad::Var log_var = ad::clamp(net.forward(tape, params, input, &rng), kLogVarMin, kLogVarMax);
      const ad::Var loss = nll_graph(tape, r2, log_var);
      if (!std::isfinite(loss.value()(0, 0))) {
        throw NumericError("train_variance: non-finite loss for dimension " + std::to_string(j) +
                           " at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      std::vector<Matrix> grads;
      for (const auto& v : params) grads.push_back(v.grad());
      std::vector<Matrix> values = net.parameters();
      adam_step(values, grads, adam, cfg.lr);
      net.set_parameters(std::move(values));
    }
  }
  return net;
}

/// One net per latent dimension, trained independently on the normalized
/// training rows. Encoder and predictor are only read.
inline VarianceModel train_variance(const Matrix& train, const ContextSet& ctx, const EncoderModel& enc,
                                    const Predictor& pred, const VarTrainConfig& cfg) {
  cfg.validate();
  if (train.rows() == 0) throw StructuralError("train_variance: empty training set");
  if (train.cols() != enc.d()) throw StructuralError("train_variance: feature count mismatch");
  const Matrix x_ctx = ctx.normalized_rows();
  VarianceModel vm;
  for (std::size_t j = 0; j < enc.p(); ++j)
    vm.nets.push_back(train_variance_net(j, train, x_ctx, enc, pred, cfg));
  return vm;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json variance_to_json(const VarianceModel& vm) {
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& net : vm.nets) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers) layers.push_back({{"w", matrix_json_flat(l.w)}, {"b", matrix_json_flat(l.b)}});
    nets.push_back({{"dropout", net.dropout}, {"layers", layers}});
  }
  return {{"format", "depscore-variance"}, {"version", 1},           {"p", vm.p()},
          {"log_var_min", vm.log_var_min}, {"log_var_max", vm.log_var_max}, {"nets", nets}};
}

inline VarianceModel variance_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "depscore-variance" || j.value("version", 0) != 1)
    throw StructuralError("variance file: unknown format or version");
  VarianceModel vm;
  vm.log_var_min = j.at("log_var_min").get<double>();
  vm.log_var_max = j.at("log_var_max").get<double>();
  for (const auto& net : j.at("nets")) {
    Mlp m;
    m.dropout = net.at("dropout").get<double>();
    for (const auto& l : net.at("layers"))
      m.layers.push_back({matrix_from_json_flat(l.at("w")), matrix_from_json_flat(l.at("b"))});
    vm.nets.push_back(std::move(m));
  }
  if (vm.p() != j.at("p").get<std::size_t>()) throw StructuralError("variance file: net count mismatch");
  return vm;
}

}  // namespace depscore
