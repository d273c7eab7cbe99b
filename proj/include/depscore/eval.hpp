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

// Evaluation: ranking metrics, rank correlation between methods, the paired
// Wilcoxon signed-rank test, and the multi-seed experiment runner used by the
// bench / ablate / sweep commands.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "depscore/context.hpp"
#include "depscore/data.hpp"
#include "depscore/errors.hpp"
#include "depscore/latent.hpp"
#include "depscore/predictor.hpp"
#include "depscore/scoring.hpp"
#include "depscore/uncertainty.hpp"

namespace depscore {

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order = iota_indices(v.size());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t k = i;
    while (k + 1 < order.size() && v[order[k + 1]] == v[order[i]]) ++k;
    const double avg = 0.5 * static_cast<double>(i + k) + 1.0;
    for (std::size_t t = i; t <= k; ++t) r[order[t]] = avg;
    i = k + 1;
  }
  return r;
}

/// Mann–Whitney form of ROC-AUC with mid-ranks; anomalies are positives.
inline double roc_auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw StructuralError("roc_auc: length mismatch");
  const auto ranks = midranks(scores);
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::anomaly) {
      pos += 1.0;
      rank_sum += ranks[i];
    } else {
      neg += 1.0;
    }
  }
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("roc_auc: both classes must be present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Average precision: Σ over distinct score thresholds (descending) of
/// Δrecall · precision. Tied scores form a single threshold.
inline double pr_auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw StructuralError("pr_auc: length mismatch");
  const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), Label::anomaly));
  if (positives == 0.0) throw UndefinedMetric("pr_auc: no positive (anomaly) labels");
  std::vector<std::size_t> order = iota_indices(scores.size());
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, ap = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t k = i;
    while (k < order.size() && scores[order[k]] == scores[order[i]]) {
      (labels[order[k]] == Label::anomaly ? tp : fp) += 1.0;
      ++k;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = k;
  }
  return ap;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedMetric("correlation of a constant vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Pearson correlation of mid-ranks.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StructuralError("spearman: length mismatch");
  if (a.size() < 3) throw UndefinedMetric("spearman: need at least 3 paired values");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  return pearson(ra, rb);
}

/// methods × datasets table of per-dataset scores (e.g. ROC-AUC).
struct MethodMatrix {
  std::vector<std::string> methods;
  std::vector<std::string> datasets;
  Matrix values;  ///< datasets × methods

  std::vector<double> method_column(std::size_t m) const { return values.column(m); }
};

/// Reads `dataset,<method1>,<method2>,...` with one row per dataset.
inline MethodMatrix load_method_matrix(const std::string& path) {
  const auto t = detail::read_csv_table(path);
  if (t.header.size() < 3) throw IngestError(path + ": need a dataset column and at least 2 methods");
  MethodMatrix mm;
  mm.methods.assign(t.header.begin() + 1, t.header.end());
  std::vector<std::size_t> cols;
  for (std::size_t c = 1; c < t.header.size(); ++c) cols.push_back(c);
  mm.values = detail::parse_numeric_columns(t, cols, path);
  for (const auto& r : t.rows) mm.datasets.push_back(r[0]);
  return mm;
}

inline Matrix spearman_matrix(const MethodMatrix& mm) {
  const std::size_t k = mm.methods.size();
  Matrix rho(k, k);
  for (std::size_t u = 0; u < k; ++u) {
    rho(u, u) = 1.0;
    for (std::size_t v = u + 1; v < k; ++v) rho(u, v) = rho(v, u) = spearman(mm.method_column(u), mm.method_column(v));
  }
  return rho;
}

/// d(u, v) = sqrt(2 (1 − ρ_uv)) with ρ the Spearman correlation.
inline Matrix corr_distance(const MethodMatrix& mm) {
  if (mm.methods.size() < 2) throw UndefinedMetric("corr_distance: need at least 2 methods");
  Matrix d = spearman_matrix(mm);
  for (std::size_t u = 0; u < d.rows(); ++u)
    for (std::size_t v = 0; v < d.cols(); ++v)
      d(u, v) = u == v ? 0.0 : std::sqrt(std::max(0.0, 2.0 * (1.0 - d(u, v))));
  return d;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline constexpr std::size_t kWilcoxonExactMax = 25;

/// Paired signed-rank test of a > b (or a ≠ b when two_sided). Zero
/// differences are dropped, |differences| mid-ranked. Exact null
/// distribution up to 25 pairs, normal approximation with continuity and
/// tie correction beyond.
inline double wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                   bool two_sided = false) {
  if (a.size() != b.size()) throw StructuralError("wilcoxon: length mismatch");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) diff.push_back(a[i] - b[i]);
  const std::size_t n = diff.size();
  if (n < 5) throw UndefinedMetric("wilcoxon: need at least 5 non-zero differences, have " + std::to_string(n));
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(diff[i]);
  const auto ranks = midranks(mag);

  if (n <= kWilcoxonExactMax) {
    // Mid-ranks are multiples of 1/2, so doubled ranks are integers.
    std::vector<std::size_t> r2(n);
    std::size_t total = 0, w_obs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
      total += r2[i];
      if (diff[i] > 0.0) w_obs += r2[i];
    }
    std::vector<double> count(total + 1, 0.0);
    count[0] = 1.0;
    for (std::size_t r : r2)
      for (std::size_t s = total; s >= r; --s) {
        count[s] += count[s - r];
        if (s == r) break;
      }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    double upper = 0.0, lower = 0.0;
    for (std::size_t s = 0; s <= total; ++s) {
      if (s >= w_obs) upper += count[s];
      if (s <= w_obs) lower += count[s];
    }
    upper /= all;
    lower /= all;
    return two_sided ? std::min(1.0, 2.0 * std::min(upper, lower)) : upper;
  }

  double w_plus = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (diff[i] > 0.0) w_plus += ranks[i];
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < n;) {
    std::size_t k = i;
    while (k < n && sorted[k] == sorted[i]) ++k;
    const double t = static_cast<double>(k - i);
    var -= (t * t * t - t) / 48.0;
    i = k;
  }
  const double sd = std::sqrt(var);
  if (two_sided) {
    const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / sd;
    return std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
  }
  return 1.0 - normal_cdf((w_plus - mean - 0.5) / sd);
}

/// Per-row mean of squared z-scores under the training statistics. A
/// marginal detector: blind to relations between features.
inline std::vector<double> marginal_zscore_scores(const Matrix& train, const Matrix& test) {
  const Matrix z = normalize(test, compute_norm_stats(train));
  std::vector<double> s(z.rows(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (double v : z.row(i)) s[i] += v * v;
    s[i] /= static_cast<double>(z.cols());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Experiments

enum class Mode { full, no_uncertainty, cart, original_space };

inline std::string mode_name(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::no_uncertainty: return "no-uncertainty";
    case Mode::cart: return "cart";
    case Mode::original_space: return "original-space";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "full") return Mode::full;
  if (s == "no-uncertainty") return Mode::no_uncertainty;
  if (s == "cart") return Mode::cart;
  if (s == "original-space") return Mode::original_space;
  throw ConfigError("unknown mode '" + s + "' (full, no-uncertainty, cart, original-space)");
}

struct ExperimentConfig {
  double train_fraction = 0.7;
  ContextOptions context;  ///< seed is overridden per run
  std::size_t latent_cap = 100;
  PredictorKind predictor = KernelIcr{};
  Cart cart;  ///< predictor used by Mode::cart
  TrainConfig encoder;
  VarTrainConfig variance;
  std::size_t original_space_dim_limit = 100;
};

struct MetricResult {
  std::vector<std::uint64_t> seeds;
  std::vector<double> roc_auc;
  std::vector<double> pr_auc;
  std::vector<double> wall_clock_s;
  double roc_mean = 0.0, roc_std = 0.0;
  double pr_mean = 0.0, pr_std = 0.0;

  /// Mean and population standard deviation of the per-seed values.
  void finalize() {
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double s = 0.0;
      for (double x : v) s += (x - mean) * (x - mean);
      sd = std::sqrt(s / static_cast<double>(v.size()));
    };
    stats(roc_auc, roc_mean, roc_std);
    stats(pr_auc, pr_mean, pr_std);
  }
};

/// Fits a complete pipeline on normal training rows for one seed.
inline Pipeline fit_pipeline(const Matrix& train, Mode mode, std::uint64_t seed, const ExperimentConfig& cfg) {
  if (mode == Mode::original_space && train.cols() > cfg.original_space_dim_limit) {
    throw ConfigError("original-space mode is limited to d <= " + std::to_string(cfg.original_space_dim_limit) +
                      " (d = " + std::to_string(train.cols()) + ")");
  }
  ContextOptions copt = cfg.context;
  copt.seed = seed;
  ContextSet ctx = build_context(train, copt);
  const Matrix xn = normalize(train, ctx.stats);
  const PredictorKind kind = mode == Mode::cart ? PredictorKind{cfg.cart} : cfg.predictor;
  const Predictor pred(kind);

  EncoderModel enc;
  if (mode == Mode::original_space) {
    enc = EncoderModel::identity(train.cols());
  } else {
    TrainConfig tc = cfg.encoder;
    tc.seed = seed;
    enc = train_encoder(xn, ctx, pred, tc, choose_latent_dim(train.cols(), cfg.latent_cap)).model;
  }
  std::optional<VarianceModel> var;
  if (mode != Mode::no_uncertainty) {
    VarTrainConfig vc = cfg.variance;
    vc.seed = seed;
    var = train_variance(xn, ctx, enc, pred, vc);
  }
  return Pipeline(std::move(ctx), std::move(enc), std::move(var), kind);
}

/// split → context → encoder → variance → scoring → metrics, once per seed.
inline MetricResult run_experiment(const LabeledDataset& ds, Mode mode, std::span<const std::uint64_t> seeds,
                                   const ExperimentConfig& cfg) {
  if (seeds.empty()) throw ConfigError("run_experiment: no seeds");
  MetricResult res;
  for (const std::uint64_t seed : seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const Split sp = split(ds, SplitSpec{cfg.train_fraction, seed});
    const Pipeline pipe = fit_pipeline(sp.train, mode, seed, cfg);
    const auto scores = score_batch(pipe, sp.test);
    res.seeds.push_back(seed);
    res.roc_auc.push_back(roc_auc(scores, sp.test_labels));
    res.pr_auc.push_back(pr_auc(scores, sp.test_labels));
    res.wall_clock_s.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  res.finalize();
  return res;
}

}  // namespace depscore
