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

// Synthetic fixtures.
//
// gen_hetero: two columns (z1, z2) with z1 = mean(z2) + sd(z2)·ε. z2 is
// uniform on [lo, hi]; sd is sd_low inside [low_lo, low_hi) and sd_high on
// the rest of the domain.
//
// gen_dep_anomalies: k independent N(0, 1) factors followed by d − k
// dependent columns x = A·f + noise. An anomaly takes a structured row and
// replaces one dependent column with a value drawn from the normal marginal
// of that column (so every feature stays inside its normal [p1, p99] band)
// that misses the structural value by at least `min_violation`.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "depscore/data.hpp"
#include "depscore/errors.hpp"
#include "depscore/numkit/matrix.hpp"
#include "depscore/numkit/random.hpp"

namespace depscore {

enum class MeanCurve { sinusoid, linear, zero };

inline std::string curve_name(MeanCurve c) {
  switch (c) {
    case MeanCurve::sinusoid: return "sinusoid";
    case MeanCurve::linear: return "linear";
    case MeanCurve::zero: return "zero";
  }
  return "?";
}

struct HeteroSpec {
  std::size_t n = 500;
  MeanCurve mean_fn = MeanCurve::linear;
  double amplitude = 1.0;  ///< sinusoid: A·sin(ω z2); linear: A·z2
  double frequency = 0.5;
  double z2_lo = -4.0;
  double z2_hi = 4.0;
  double low_lo = -4.0;  ///< low-variance region is [low_lo, low_hi)
  double low_hi = 0.0;
  double sd_low = 0.1;
  double sd_high = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n == 0) throw SpecError("HeteroSpec: n must be >= 1");
    if (!(z2_lo < z2_hi)) throw SpecError("HeteroSpec: need z2_lo < z2_hi");
    if (!(sd_low > 0.0) || !(sd_high > 0.0)) throw SpecError("HeteroSpec: sd must be > 0 in both regions");
    if (!(z2_lo <= low_lo && low_lo < low_hi && low_hi <= z2_hi))
      throw SpecError("HeteroSpec: low-variance region must be a non-empty part of [z2_lo, z2_hi]");
    if (low_lo == z2_lo && low_hi == z2_hi) throw SpecError("HeteroSpec: no high-variance region");
  }

  double mean_at(double z2) const {
    switch (mean_fn) {
      case MeanCurve::sinusoid: return amplitude * std::sin(frequency * z2);
      case MeanCurve::linear: return amplitude * z2;
      case MeanCurve::zero: return 0.0;
    }
    return 0.0;
  }
  double sd_at(double z2) const { return z2 >= low_lo && z2 < low_hi ? sd_low : sd_high; }
};

struct HeteroData {
  Matrix rows;               ///< n × 2, columns (z1, z2)
  std::vector<double> sd;    ///< true conditional sd per row
  std::vector<double> eps;   ///< standardized noise draw per row
};

inline HeteroData gen_hetero(const HeteroSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, 0x4e7e);
  HeteroData out{Matrix(spec.n, 2), std::vector<double>(spec.n), std::vector<double>(spec.n)};
  for (std::size_t i = 0; i < spec.n; ++i) {
    const double z2 = uniform(rng, spec.z2_lo, spec.z2_hi);
    const double e = standard_normal(rng);
    out.sd[i] = spec.sd_at(z2);
    out.eps[i] = e;
    out.rows(i, 0) = spec.mean_at(z2) + out.sd[i] * e;
    out.rows(i, 1) = z2;
  }
  return out;
}

/// Probe points: a sits mid low-variance region `dev_a` low-sds off the
/// curve, b sits mid the wider high-variance segment `dev_b` high-sds off
/// the curve.
struct HeteroProbes {
  std::vector<double> a;
  std::vector<double> b;
  double residual_a = 0.0;
  double residual_b = 0.0;
};

inline HeteroProbes hetero_probes(const HeteroSpec& spec, double dev_a = 4.0, double dev_b = 0.5) {
  const double za = 0.5 * (spec.low_lo + spec.low_hi);
  const double zb = spec.z2_hi - spec.low_hi >= spec.low_lo - spec.z2_lo ? 0.5 * (spec.low_hi + spec.z2_hi)
                                                                       : 0.5 * (spec.z2_lo + spec.low_lo);
  HeteroProbes p;
  p.residual_a = dev_a * spec.sd_low;
  p.residual_b = dev_b * spec.sd_high;
  p.a = {spec.mean_at(za) + p.residual_a, za};
  p.b = {spec.mean_at(zb) + p.residual_b, zb};
  return p;
}

inline LabeledDataset hetero_dataset(const HeteroData& h) {
  LabeledDataset ds;
  ds.features = h.rows;
  ds.labels.assign(h.rows.rows(), Label::normal);
  ds.feature_names = {"z1", "z2"};
  ds.name = "hetero";
  return ds;
}

inline nlohmann::json hetero_truth_json(const HeteroSpec& spec, const HeteroData& h) {
  const HeteroProbes pr = hetero_probes(spec);
  return {{"generator", "hetero"},
          {"n", spec.n},
          {"mean_fn", curve_name(spec.mean_fn)},
          {"amplitude", spec.amplitude},
          {"frequency", spec.frequency},
          {"z2_range", {spec.z2_lo, spec.z2_hi}},
          {"low_region", {spec.low_lo, spec.low_hi}},
          {"sd_low", spec.sd_low},
          {"sd_high", spec.sd_high},
          {"seed", spec.seed},
          {"probe_a", pr.a},
          {"probe_b", pr.b},
          {"sd", h.sd}};
}

// ---------------------------------------------------------------------------

struct DepAnomalySpec {
  std::size_t d = 8;
  std::size_t n_normal = 1900;
  std::size_t n_anomaly = 100;
  std::size_t factors = 0;         ///< 0 → ⌈d/2⌉
  std::optional<Matrix> mixing;    ///< (d − k) × k; random when unset
  double noise_sd = 0.1;
  double min_violation = 0.5;
  double range_lo_pct = 1.0;
  double range_hi_pct = 99.0;
  std::size_t max_attempts = 10000;
  std::uint64_t seed = 0;

  std::size_t k() const { return factors == 0 ? (d + 1) / 2 : factors; }

  void validate() const {
    if (d < 2) throw SpecError("DepAnomalySpec: d must be >= 2");
    if (k() >= d) throw SpecError("DepAnomalySpec: need at least one dependent feature (factors < d)");
    if (n_normal < 2) throw SpecError("DepAnomalySpec: n_normal must be >= 2");
    if (!(noise_sd >= 0.0)) throw SpecError("DepAnomalySpec: noise_sd must be >= 0");
    if (!(range_lo_pct >= 0.0 && range_lo_pct < range_hi_pct && range_hi_pct <= 100.0))
      throw SpecError("DepAnomalySpec: bad percentile range");
    if (mixing && (mixing->rows() != d - k() || mixing->cols() != k()))
      throw SpecError("DepAnomalySpec: mixing must be (d - k) x k, got " + mixing->shape_string());
    if (max_attempts == 0) throw SpecError("DepAnomalySpec: max_attempts must be >= 1");
  }
};

struct InjectedAnomaly {
  std::size_t row = 0;
  std::size_t feature = 0;
  double structural = 0.0;  ///< value the structure predicts
  double replaced = 0.0;    ///< value written
};

struct DepAnomalyData {
  LabeledDataset dataset;
  Matrix mixing;
  std::vector<double> range_lo;
  std::vector<double> range_hi;
  std::vector<InjectedAnomaly> anomalies;
};

/// Linear-interpolated percentile of an unsorted sample.
inline double percentile(std::vector<double> v, double pct) {
  if (v.empty()) throw StructuralError("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline DepAnomalyData gen_dep_anomalies(const DepAnomalySpec& spec) {
  spec.validate();
  const std::size_t d = spec.d, k = spec.k();
  Rng rng = make_rng(spec.seed, 0xde9a);

  Matrix a = spec.mixing ? *spec.mixing : Matrix(d - k, k);
  if (!spec.mixing)
    for (double& v : a.values()) v = standard_normal(rng) / std::sqrt(static_cast<double>(k));

  auto structured = [&](std::vector<double>& row) {
    for (std::size_t f = 0; f < k; ++f) row[f] = standard_normal(rng);
    for (std::size_t j = k; j < d; ++j) {
      double s = 0.0;
      for (std::size_t f = 0; f < k; ++f) s += a(j - k, f) * row[f];
      row[j] = s + spec.noise_sd * standard_normal(rng);
    }
  };
  auto structural_value = [&](const std::vector<double>& row, std::size_t j) {
    double s = 0.0;
    for (std::size_t f = 0; f < k; ++f) s += a(j - k, f) * row[f];
    return s;
  };

  Matrix normal(spec.n_normal, d);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < spec.n_normal; ++i) {
    structured(row);
    std::copy(row.begin(), row.end(), normal.row(i).begin());
  }

  DepAnomalyData out;
  out.mixing = a;
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = normal.column(j);
    out.range_lo.push_back(percentile(col, spec.range_lo_pct));
    out.range_hi.push_back(percentile(col, spec.range_hi_pct));
  }
  auto in_range = [&](const std::vector<double>& r) {
    for (std::size_t j = 0; j < d; ++j)
      if (r[j] < out.range_lo[j] || r[j] > out.range_hi[j]) return false;
    return true;
  };

  Matrix anomalous(spec.n_anomaly, d);
  std::vector<InjectedAnomaly> injected;
  for (std::size_t i = 0; i < spec.n_anomaly; ++i) {
    const std::size_t j = k + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(d - k));
    bool done = false;
    for (std::size_t attempt = 0; attempt < spec.max_attempts && !done; ++attempt) {
      structured(row);
      const double target = structural_value(row, j);
      const auto donor = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(spec.n_normal));
      row[j] = normal(donor, j);
      if (std::abs(row[j] - target) < spec.min_violation || !in_range(row)) continue;
      std::copy(row.begin(), row.end(), anomalous.row(i).begin());
      injected.push_back({i, j, target, row[j]});
      done = true;
    }
    if (!done)
      throw SpecError("gen_dep_anomalies: no in-range violation found for anomaly " + std::to_string(i) +
                      " after " + std::to_string(spec.max_attempts) + " attempts");
  }

  // Interleave normals and anomalies in a seeded order.
  const std::size_t n = spec.n_normal + spec.n_anomaly;
  std::vector<std::size_t> order = iota_indices(n);
  shuffle_indices(order, rng);
  LabeledDataset& ds = out.dataset;
  ds.features = Matrix(n, d);
  ds.labels.resize(n);
  ds.name = "dep_anomalies";
  for (std::size_t j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j + 1));
  std::vector<std::size_t> position(n);
  for (std::size_t dst = 0; dst < n; ++dst) {
    const std::size_t src = order[dst];
    position[src] = dst;
    const bool is_anomaly = src >= spec.n_normal;
    const auto from = is_anomaly ? anomalous.row(src - spec.n_normal) : normal.row(src);
    std::copy(from.begin(), from.end(), ds.features.row(dst).begin());
    ds.labels[dst] = is_anomaly ? Label::anomaly : Label::normal;
  }
  for (auto& inj : injected) inj.row = position[spec.n_normal + inj.row];
  std::sort(injected.begin(), injected.end(),
            [](const InjectedAnomaly& x, const InjectedAnomaly& y) { return x.row < y.row; });
  out.anomalies = std::move(injected);
  return out;
}

inline nlohmann::json dep_truth_json(const DepAnomalySpec& spec, const DepAnomalyData& data) {
  nlohmann::json mix = nlohmann::json::array();
  for (std::size_t r = 0; r < data.mixing.rows(); ++r)
    mix.push_back(std::vector<double>(data.mixing.row(r).begin(), data.mixing.row(r).end()));
  nlohmann::json anomalies = nlohmann::json::array();
  for (const auto& a : data.anomalies)
    anomalies.push_back({{"row", a.row}, {"feature", a.feature}, {"structural", a.structural}, {"replaced", a.replaced}});
  return {{"generator", "dep_anomalies"},
          {"d", spec.d},
          {"factors", spec.k()},
          {"n_normal", spec.n_normal},
          {"n_anomaly", spec.n_anomaly},
          {"noise_sd", spec.noise_sd},
          {"min_violation", spec.min_violation},
          {"seed", spec.seed},
          {"mixing", mix},
          {"range_lo", data.range_lo},
          {"range_hi", data.range_hi},
          {"anomalies", anomalies}};
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace depscore
