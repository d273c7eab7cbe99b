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

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "depscore/errors.hpp"
#include "depscore/numkit/matrix.hpp"

namespace depscore {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  ///< decoupled (AdamW-style) when nonzero
};

/// Moment buffers for one parameter set. Owned by a single trainer.
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

/// One Adam update with bias correction. Moment buffers are created lazily on
/// the first call and must keep matching shapes afterwards.
inline void adam_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size()) {
    throw StructuralError("adam_step: " + std::to_string(params.size()) + " params vs " +
                          std::to_string(grads.size()) + " grads");
  }
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  if (state.m.empty()) {
    for (const Matrix& p : params) {
      state.m.emplace_back(p.rows(), p.cols());
      state.v.emplace_back(p.rows(), p.cols());
    }
  }
  if (state.m.size() != params.size()) throw StructuralError("adam_step: state/param count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].require_same_shape(grads[i], "adam_step grad");
    params[i].require_same_shape(state.m[i], "adam_step state");
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      if (c.weight_decay != 0.0) p[k] -= lr * c.weight_decay * p[k];
      p[k] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

/// Per-step learning rate.
struct LrSchedule {
  enum class Kind { constant, cosine_decay };

  Kind kind = Kind::constant;
  double start = 1e-3;
  double end = 1e-3;
  std::size_t total_steps = 1;

  static LrSchedule constant(double rate) { return {Kind::constant, rate, rate, 1}; }
  static LrSchedule cosine(double start, double end, std::size_t total_steps) {
    return {Kind::cosine_decay, start, end, total_steps};
  }

  /// rate(0) = start, rate(total_steps) = end; steps beyond the horizon stay at `end`.
  double rate(std::size_t step) const {
    if (kind == Kind::constant) return start;
    if (total_steps == 0 || step >= total_steps) return end;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
};

}  // namespace depscore
