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

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "depscore/errors.hpp"
#include "depscore/numkit/autodiff.hpp"

namespace depscore {

/// Builds a scalar loss on `tape` from parameter leaves (one per parameter matrix).
using LossBuilder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

namespace detail {

inline double evaluate_loss(const LossBuilder& loss_fn, const std::vector<Matrix>& params) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(tape.constant(p));
  const double v = loss_fn(tape, leaves).value()(0, 0);
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace detail

/// Largest |analytic − central difference| / max(1, |central difference|) over
/// every scalar parameter.
inline double grad_check(const LossBuilder& loss_fn, std::vector<Matrix> params, double eps = 1e-5) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ConfigError("grad_check: eps must be in (0, 1e-2]");

  std::vector<Matrix> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Matrix& p : params) leaves.push_back(tape.param(p));
    ad::Var loss = loss_fn(tape, leaves);
    tape.backward(loss);
    for (const ad::Var& l : leaves) analytic.push_back(l.grad());
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + eps;
      const double up = detail::evaluate_loss(loss_fn, params);
      values[k] = saved - eps;
      const double down = detail::evaluate_loss(loss_fn, params);
      values[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err =
          std::abs(analytic[i].values()[k] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace depscore
