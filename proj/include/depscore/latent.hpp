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

// Dependency-aligned linear representation.
//
// A linear encoder z = W_enc x + b_enc is trained so that every latent
// coordinate is well predicted from the others by the frozen conditional
// predictor (dependency loss), while an untied linear decoder keeps the map
// informative (Huber reconstruction loss):
//
//   L_rl = λ_dep · mean_ij (z_ij − μ̂_ij)²  +  λ_rec · (1/|B|) Σ_i Σ_k ρ_δ(x̂_ik − x_ik)
//
// Context latents are re-encoded with the current weights on every batch.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "depscore/context.hpp"
#include "depscore/errors.hpp"
#include "depscore/numkit/autodiff.hpp"
#include "depscore/numkit/matrix.hpp"
#include "depscore/numkit/optim.hpp"
#include "depscore/numkit/random.hpp"
#include "depscore/predictor.hpp"

namespace depscore {

/// p = d when d ≤ cap, else cap.
inline std::size_t choose_latent_dim(std::size_t d, std::size_t cap = 100) {
  if (d == 0) throw ConfigError("choose_latent_dim: d must be >= 1");
  if (cap == 0) throw ConfigError("choose_latent_dim: cap must be >= 1");
  return d <= cap ? d : cap;
}

struct EncoderModel {
  Matrix w_enc;  ///< p × d
  Matrix b_enc;  ///< 1 × p
  Matrix w_dec;  ///< d × p
  Matrix b_dec;  ///< 1 × d

  std::size_t d() const noexcept { return w_enc.cols(); }
  std::size_t p() const noexcept { return w_enc.rows(); }

  Matrix encode(const Matrix& x) const {
    if (x.cols() != d())
      throw StructuralError("encode: expected " + std::to_string(d()) + " features, got " +
                            std::to_string(x.cols()));
    return add_row_broadcast(matmul_nt(x, w_enc), b_enc);
  }

  Matrix decode(const Matrix& z) const {
    if (z.cols() != p()) throw StructuralError("decode: latent width mismatch");
    return add_row_broadcast(matmul_nt(z, w_dec), b_dec);
  }

  /// p = d, W_enc = I, b = 0, used when dependencies are modelled in the
  /// original (normalized) feature space.
  static EncoderModel identity(std::size_t d) {
    return {Matrix::identity(d), Matrix(1, d), Matrix::identity(d), Matrix(1, d)};
  }

  friend bool operator==(const EncoderModel&, const EncoderModel&) = default;
};

/// Glorot-uniform weights, zero biases.
inline EncoderModel init_encoder(std::size_t d, std::size_t p, std::uint64_t seed) {
  if (p == 0 || p > d) throw ConfigError("init_encoder: need 1 <= p <= d");
  const double a = std::sqrt(6.0 / static_cast<double>(d + p));
  Rng rng = make_rng(seed, 0xe2c0);
  EncoderModel m{Matrix(p, d), Matrix(1, p), Matrix(d, p), Matrix(1, d)};
  for (double& v : m.w_enc.values()) v = uniform(rng, -a, a);
  for (double& v : m.w_dec.values()) v = uniform(rng, -a, a);
  return m;
}

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 1024;
  double lr_start = 5e-4;
  double lr_end = 1e-6;
  LrSchedule::Kind lr_kind = LrSchedule::Kind::cosine_decay;
  double lambda_dep = 1.0;
  double lambda_rec = 0.3;
  double huber_delta = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (lambda_dep < 0.0 || lambda_rec < 0.0) throw ConfigError("TrainConfig: negative loss weight");
    if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw ConfigError("TrainConfig: learning rates must be > 0");
  }
};

/// mean over samples and dimensions of (z − μ̂)².
inline double dependency_loss(const Matrix& z, const Matrix& mu_hat) {
  z.require_same_shape(mu_hat, "dependency_loss");
  if (z.empty()) throw StructuralError("dependency_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double r = z.values()[i] - mu_hat.values()[i];
    s += r * r;
  }
  return s / static_cast<double>(z.size());
}

/// (1/|B|) Σ_i Σ_k ρ_δ(x̂_ik − x_ik).
inline double reconstruction_loss(const Matrix& x_norm, const Matrix& x_hat, double delta = 1.0) {
  x_norm.require_same_shape(x_hat, "reconstruction_loss");
  if (x_norm.rows() == 0) throw StructuralError("reconstruction_loss: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < x_norm.size(); ++i)
    s += ad::huber_value(x_hat.values()[i] - x_norm.values()[i], delta);
  return s / static_cast<double>(x_norm.rows());
}

/// Every conditional mean for a latent batch, one predictor call per dimension.
inline Matrix conditional_means(const Predictor& pred, const Matrix& z, const Matrix& z_ctx) {
  Matrix mu(z.rows(), z.cols());
  for (std::size_t j = 0; j < z.cols(); ++j) {
    const auto col = pred.conditional_mean(ConditionalQuery{j, z_ctx, z});
    for (std::size_t i = 0; i < z.rows(); ++i) mu(i, j) = col[i];
  }
  return mu;
}

/// Tape nodes for one evaluation of the representation objective.
struct EncoderGraph {
  ad::Var loss;
  ad::Var dep;
  ad::Var rec;
};

/// Records L_rl for a batch. `params` are (W_enc, b_enc, W_dec, b_dec). When the
/// predictor is differentiable the dependency term backpropagates through μ̂;
/// otherwise μ̂ enters as a constant (stop-gradient).
inline EncoderGraph encoder_graph(ad::Tape& t, std::span<const ad::Var> params, const Matrix& x_batch,
                                  const Matrix& x_ctx, const Predictor& pred, const TrainConfig& cfg) {
  const ad::Var w_enc = params[0], b_enc = params[1], w_dec = params[2], b_dec = params[3];
  const ad::Var x = t.constant(x_batch);
  const ad::Var xc = t.constant(x_ctx);
  const ad::Var z = ad::add_row(ad::matmul(x, ad::transpose(w_enc)), b_enc);
  const ad::Var zc = ad::add_row(ad::matmul(xc, ad::transpose(w_enc)), b_enc);
  const std::size_t p = z.cols();

  ad::Var mu;
  if (pred.supports_gradient()) {
    for (std::size_t j = 0; j < p; ++j) {
      Matrix unit(1, p);
      unit(0, j) = 1.0;
      const ad::Var placed = ad::matmul(pred.conditional_mean(z, zc, j), t.constant(std::move(unit)));
      mu = j == 0 ? placed : ad::add(mu, placed);
    }
  } else {
    mu = t.constant(conditional_means(pred, z.value(), zc.value()));
  }
  const ad::Var dep = ad::mse(z, mu);
  const ad::Var x_hat = ad::add_row(ad::matmul(z, ad::transpose(w_dec)), b_dec);
  const ad::Var rec = ad::huber(x_hat, x, cfg.huber_delta);
  const ad::Var loss = ad::add(ad::scale(dep, cfg.lambda_dep), ad::scale(rec, cfg.lambda_rec));
  return {loss, dep, rec};
}

struct EpochLoss {
  std::size_t epoch = 0;  ///< 0 = before the first update
  double l_rl = 0.0;
  double l_dep = 0.0;
  double l_rec = 0.0;
};

struct EncoderTrainResult {
  EncoderModel model;
  std::vector<EpochLoss> trace;  ///< evaluated on a fixed batch after each epoch

  double best_loss() const {
    double b = trace.front().l_rl;
    for (const auto& e : trace) b = std::min(b, e.l_rl);
    return b;
  }
};

inline EpochLoss evaluate_encoder(const EncoderModel& m, const Matrix& x_batch, const Matrix& x_ctx,
                                  const Predictor& pred, const TrainConfig& cfg) {
  const Matrix z = m.encode(x_batch);
  const Matrix mu = conditional_means(pred, z, m.encode(x_ctx));
  EpochLoss e;
  e.l_dep = dependency_loss(z, mu);
  e.l_rec = reconstruction_loss(x_batch, m.decode(z), cfg.huber_delta);
  e.l_rl = cfg.lambda_dep * e.l_dep + cfg.lambda_rec * e.l_rec;
  return e;
}

/// Trains the encoder/decoder with Adam. `train` must already be normalized
/// with the context statistics; the predictor is never modified.
inline EncoderTrainResult train_encoder(const Matrix& train, const ContextSet& ctx,
                                        const Predictor& pred, const TrainConfig& cfg,
                                        std::size_t p) {
  cfg.validate();
  if (train.rows() == 0) throw StructuralError("train_encoder: empty training set");
  if (train.cols() != ctx.d()) throw StructuralError("train_encoder: feature count mismatch with context");
  const Matrix x_ctx = ctx.normalized_rows();

  EncoderTrainResult res;
  res.model = init_encoder(train.cols(), p, cfg.seed);
  const std::size_t n = train.rows();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const LrSchedule sched{cfg.lr_kind, cfg.lr_start, cfg.lr_end, cfg.epochs * batches};

  std::vector<std::size_t> eval_rows = iota_indices(std::min(n, cfg.batch_size));
  const Matrix eval_batch = select_rows(train, eval_rows);
  res.trace.push_back(evaluate_encoder(res.model, eval_batch, x_ctx, pred, cfg));

  AdamState adam{AdamConfig{}};
  Rng rng = make_rng(cfg.seed, 0xba7c);
  std::vector<std::size_t> order = iota_indices(n);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
      const Matrix xb = select_rows(train, idx);

      ad::Tape tape;
      const std::vector<ad::Var> params{tape.param(res.model.w_enc), tape.param(res.model.b_enc),
                                        tape.param(res.model.w_dec), tape.param(res.model.b_dec)};
      const EncoderGraph g = encoder_graph(tape, params, xb, x_ctx, pred, cfg);
      const double loss = g.loss.value()(0, 0);
      if (!std::isfinite(loss)) {
        throw NumericError("train_encoder: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b));
      }
      tape.backward(g.loss);
      std::vector<Matrix> grads;
      for (const auto& v : params) grads.push_back(v.grad());
      std::vector<Matrix> values{res.model.w_enc, res.model.b_enc, res.model.w_dec, res.model.b_dec};
      adam_step(values, grads, adam, sched.rate(step++));
      res.model = {std::move(values[0]), std::move(values[1]), std::move(values[2]), std::move(values[3])};
    }
    EpochLoss e = evaluate_encoder(res.model, eval_batch, x_ctx, pred, cfg);
    e.epoch = epoch;
    res.trace.push_back(e);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Persistence (JSON, full double precision)

inline nlohmann::json matrix_json_flat(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.storage()}};
}

inline Matrix matrix_from_json_flat(const nlohmann::json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline nlohmann::json encoder_to_json(const EncoderModel& m) {
  return {{"format", "depscore-encoder"}, {"version", 1},
          {"d", m.d()},                   {"p", m.p()},
          {"w_enc", matrix_json_flat(m.w_enc)}, {"b_enc", matrix_json_flat(m.b_enc)},
          {"w_dec", matrix_json_flat(m.w_dec)}, {"b_dec", matrix_json_flat(m.b_dec)}};
}

inline EncoderModel encoder_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "depscore-encoder" || j.value("version", 0) != 1)
    throw StructuralError("encoder file: unknown format or version");
  EncoderModel m{matrix_from_json_flat(j.at("w_enc")), matrix_from_json_flat(j.at("b_enc")),
                 matrix_from_json_flat(j.at("w_dec")), matrix_from_json_flat(j.at("b_dec"))};
  if (m.b_enc.cols() != m.p() || m.w_dec.rows() != m.d() || m.b_dec.cols() != m.d())
    throw StructuralError("encoder file: inconsistent shapes");
  return m;
}

}  // namespace depscore
