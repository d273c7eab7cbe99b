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

// Representative context set: a budgeted subset of the normal training rows
// chosen by k-means prototype selection. Each cluster contributes its rows
// closest to the centroid and its rows farthest from it, so the set covers
// both the dense core and the spread of every mode.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "depscore/data.hpp"
#include "depscore/errors.hpp"
#include "depscore/numkit/matrix.hpp"
#include "depscore/numkit/random.hpp"

namespace depscore {

struct KMeansResult {
  Matrix centroids;                     ///< k × d
  std::vector<std::size_t> assignment;  ///< cluster id per input row
  std::size_t k = 0;
};

namespace detail {

inline std::size_t nearest_centroid(std::span<const double> x, const Matrix& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(x, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline std::vector<std::size_t> assign_all(const Matrix& x, const Matrix& centroids) {
  std::vector<std::size_t> a(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) a[i] = nearest_centroid(x.row(i), centroids);
  return a;
}

inline Matrix kmeanspp_seed(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  std::vector<std::size_t> chosen{static_cast<std::size_t>(rng() % n)};
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    const auto last = x.row(chosen.back());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(x.row(i), last));
      total += d2[i];
    }
    // Every remaining point coincides with a chosen centre.
    if (total <= 0.0) break;
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc > target) break;
    }
    chosen.push_back(pick);
  }
  return select_rows(x, chosen);
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. Clusters left empty are dropped.
inline KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed,
                           std::size_t max_iters = 100) {
  if (k == 0) throw ConfigError("kmeans: k must be >= 1");
  if (x.rows() == 0) throw StructuralError("kmeans: empty input");
  if (max_iters == 0) throw ConfigError("kmeans: max_iters must be >= 1");
  Rng rng = make_rng(seed, 0x6b6d);
  Matrix centroids = detail::kmeanspp_seed(x, std::min(k, x.rows()), rng);
  std::vector<std::size_t> assign = detail::assign_all(x, centroids);

  const std::size_t d = x.cols();
  for (std::size_t it = 0; it < max_iters; ++it) {
    Matrix sums(centroids.rows(), d);
    std::vector<std::size_t> counts(centroids.rows(), 0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      counts[assign[i]] += 1;
      auto s = sums.row(assign[i]);
      const auto r = x.row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += r[j];
    }
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j)
        centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
    auto next = detail::assign_all(x, centroids);
    if (next == assign) break;
    assign = std::move(next);
  }

  std::vector<bool> used(centroids.rows(), false);
  for (std::size_t a : assign) used[a] = true;
  std::vector<std::size_t> remap(centroids.rows(), 0);
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    if (!used[c]) continue;
    remap[c] = kept.size();
    kept.push_back(c);
  }
  KMeansResult res;
  res.centroids = select_rows(centroids, kept);
  res.k = kept.size();
  res.assignment.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) res.assignment[i] = remap[assign[i]];
  return res;
}

struct ContextOptions {
  std::size_t budget = 500;
  std::size_t k = 100;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  /// Cluster on z-scored features (training-set statistics) instead of raw ones.
  bool prescale = false;
};

struct ContextSet {
  Matrix rows;  ///< |C| × d, original (un-normalized) feature space
  NormStats stats;
  std::vector<std::size_t> source_indices;  ///< ascending row ids into the training matrix
  std::size_t budget = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  bool prescale = false;

  std::size_t size() const noexcept { return rows.rows(); }
  std::size_t d() const noexcept { return rows.cols(); }
  Matrix normalized_rows() const { return normalize(rows, stats); }
};

/// Final per-cluster quotas: ⌊c/k⌋ each, the remainder to the largest
/// clusters, then capacity overflow redistributed one row at a time to the
/// largest clusters that still have unselected members.
inline std::vector<std::size_t> allocate_quotas(const std::vector<std::size_t>& sizes,
                                                std::size_t budget) {
  const std::size_t k = sizes.size();
  std::vector<std::size_t> order = iota_indices(k);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  std::vector<std::size_t> quota(k, budget / k);
  for (std::size_t r = 0; r < budget % k; ++r) quota[order[r]] += 1;

  std::size_t leftover = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (quota[c] > sizes[c]) {
      leftover += quota[c] - sizes[c];
      quota[c] = sizes[c];
    }
  }
  while (leftover > 0) {
    bool progressed = false;
    for (std::size_t c : order) {
      if (leftover == 0) break;
      if (quota[c] < sizes[c]) {
        quota[c] += 1;
        leftover -= 1;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return quota;
}

/// Members of one cluster ordered by (distance to centroid, row id).
inline std::vector<std::size_t> members_by_distance(const Matrix& x, const KMeansResult& km,
                                                    std::size_t cluster) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t i = 0; i < x.rows(); ++i)
    if (km.assignment[i] == cluster)
      d.emplace_back(squared_distance(x.row(i), km.centroids.row(cluster)), i);
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  out.reserve(d.size());
  for (const auto& [dist, i] : d) out.push_back(i);
  return out;
}

/// ⌈q/2⌉ nearest and ⌊q/2⌋ farthest members of an ordered member list.
inline std::vector<std::size_t> near_far_pick(const std::vector<std::size_t>& ordered, std::size_t q) {
  q = std::min(q, ordered.size());
  const std::size_t near = (q + 1) / 2;
  const std::size_t far = q / 2;
  std::vector<std::size_t> out(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(near));
  out.insert(out.end(), ordered.end() - static_cast<std::ptrdiff_t>(far), ordered.end());
  return out;
}

inline ContextSet build_context(const Matrix& train, const ContextOptions& opt) {
  if (opt.budget == 0) throw ConfigError("build_context: budget must be >= 1");
  if (train.rows() == 0) throw StructuralError("build_context: empty training set");
  ContextSet ctx;
  ctx.budget = opt.budget;
  ctx.k = opt.k;
  ctx.seed = opt.seed;
  ctx.prescale = opt.prescale;

  if (train.rows() <= opt.budget) {
    ctx.source_indices = iota_indices(train.rows());
  } else {
    const Matrix space = opt.prescale ? normalize(train, compute_norm_stats(train)) : train;
    const KMeansResult km = kmeans(space, std::min(opt.k, train.rows()), opt.seed, opt.max_iters);
    std::vector<std::vector<std::size_t>> members(km.k);
    std::vector<std::size_t> sizes(km.k);
    for (std::size_t c = 0; c < km.k; ++c) {
      members[c] = members_by_distance(space, km, c);
      sizes[c] = members[c].size();
    }
    const auto quota = allocate_quotas(sizes, opt.budget);
    for (std::size_t c = 0; c < km.k; ++c) {
      const auto pick = near_far_pick(members[c], quota[c]);
      ctx.source_indices.insert(ctx.source_indices.end(), pick.begin(), pick.end());
    }
    std::sort(ctx.source_indices.begin(), ctx.source_indices.end());
  }
  ctx.rows = select_rows(train, ctx.source_indices);
  ctx.stats = compute_norm_stats(ctx.rows);
  return ctx;
}

// ---------------------------------------------------------------------------
// Flat-file persistence: header, statistics, rows, source indices.

inline void write_context(std::ostream& out, const ContextSet& ctx) {
  out << "depscore-context 1\n";
  out << ctx.budget << ' ' << ctx.d() << ' ' << ctx.k << ' ' << ctx.seed << ' '
      << (ctx.prescale ? 1 : 0) << ' ' << ctx.size() << '\n';
  auto line = [&](std::span<const double> v) {
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << format_double(v[i]);
    out << '\n';
  };
  line(ctx.stats.mean);
  line(ctx.stats.std);
  for (std::size_t i = 0; i < ctx.size(); ++i) line(ctx.rows.row(i));
  for (std::size_t i = 0; i < ctx.source_indices.size(); ++i)
    out << (i ? " " : "") << ctx.source_indices[i];
  out << '\n';
}

inline ContextSet read_context(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "depscore-context" || version != 1)
    throw StructuralError("read_context: not a depscore context file");
  ContextSet ctx;
  std::size_t d = 0, n = 0;
  int prescale = 0;
  in >> ctx.budget >> d >> ctx.k >> ctx.seed >> prescale >> n;
  ctx.prescale = prescale != 0;
  auto read_vec = [&](std::size_t len) {
    std::vector<double> v(len);
    for (double& x : v) {
      std::string tok;
      in >> tok;
      const auto parsed = detail::parse_double(tok);
      if (!parsed) throw StructuralError("read_context: bad number '" + tok + "'");
      x = *parsed;
    }
    return v;
  };
  ctx.stats.mean = read_vec(d);
  ctx.stats.std = read_vec(d);
  ctx.rows = Matrix(n, d, read_vec(n * d));
  ctx.source_indices.resize(n);
  for (auto& i : ctx.source_indices) in >> i;
  if (!in) throw StructuralError("read_context: truncated file");
  return ctx;
}

inline void save_context(const std::string& path, const ContextSet& ctx) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write '" + path + "'");
  write_context(out, ctx);
}

inline ContextSet load_context(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path + "'");
  return read_context(in);
}

}  // namespace depscore
