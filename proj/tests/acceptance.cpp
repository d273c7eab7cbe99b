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

// Acceptance suite: one PASS/FAIL line per headline criterion. Exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "depscore/context.hpp"
#include "depscore/eval.hpp"
#include "depscore/latent.hpp"
#include "depscore/numkit/gradcheck.hpp"
#include "depscore/scoring.hpp"
#include "depscore/synth.hpp"
#include "depscore/uncertainty.hpp"

namespace {

using namespace depscore;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

Matrix gaussian(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = scale * standard_normal(rng);
  return m;
}

// ---------------------------------------------------------------------------

Outcome worked_example() {
  const std::vector<double> r{1.068, 1.519, 1.942, 0.340, 1.760};
  const std::vector<double> contrib{1.140, 2.306, 3.771, 0.116, 3.096};
  const std::vector<double> nll{1.489, 2.072, 2.805, 0.977, 2.467};
  const auto rep = report_from_components(r, std::vector<double>(5, 0.0), std::vector<double>(5, 1.0));
  double worst_c = 0.0, worst_n = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    worst_c = std::max(worst_c, std::abs(rep.per_dim[j].contribution - contrib[j]));
    worst_n = std::max(worst_n, std::abs(rep.per_dim[j].nll_full - nll[j]));
  }
  return {worst_c <= 5e-3 && worst_n <= 5e-3,
          "max |contribution err| = " + sci(worst_c) + ", max |NLL err| = " + sci(worst_n) +
              " (tol 5e-3), score = " + fmt(rep.score, 3)};
}

Outcome gradient_checks() {
  double dep = 0.0, rec = 0.0, nll = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, 77);
    const Matrix xb = gaussian(8, 3, rng), xc = gaussian(6, 3, rng);
    EncoderModel m = init_encoder(3, 3, seed);
    m.b_enc = gaussian(1, 3, rng, 0.3);
    m.b_dec = gaussian(1, 3, rng, 0.3);
    const std::vector<Matrix> params{m.w_enc, m.b_enc, m.w_dec, m.b_dec};
    const Predictor pred(KernelIcr{});

    TrainConfig dep_only;
    dep_only.lambda_rec = 0.0;
    dep = std::max(dep, grad_check([&](ad::Tape& t, std::span<const ad::Var> p) {
      return encoder_graph(t, p, xb, xc, pred, dep_only).loss;
    }, params));

    // Inputs scaled so reconstruction errors fall on both sides of δ.
    const Matrix xw = gaussian(8, 3, rng, 2.0);
    TrainConfig rec_only;
    rec_only.lambda_dep = 0.0;
    rec_only.lambda_rec = 1.0;
    rec = std::max(rec, grad_check([&](ad::Tape& t, std::span<const ad::Var> p) {
      return encoder_graph(t, p, xw, xc, pred, rec_only).loss;
    }, params));

    const Mlp net = Mlp::make(2, rng);
    const Matrix z = gaussian(8, 2, rng);
    Matrix r2 = gaussian(8, 1, rng);
    for (double& v : r2.values()) v *= v;
    nll = std::max(nll, grad_check([&](ad::Tape& t, std::span<const ad::Var> p) {
      return nll_graph(t, r2, ad::clamp(net.forward(t, p, t.constant(z), nullptr), kLogVarMin, kLogVarMax));
    }, net.parameters()));
  }
  const double worst = std::max({dep, rec, nll});
  return {worst <= 1e-4, "max relative error: dependency " + sci(dep) + ", Huber reconstruction " + sci(rec) +
                             ", Gaussian NLL " + sci(nll) + " (tol 1e-4)"};
}

Outcome metric_oracles() {
  Rng rng = make_rng(2024);
  double worst_roc = 0.0, worst_pr = 0.0;
  std::size_t instances = 0;
  while (instances < 200) {
    const std::size_t n = 2 + rng() % 19;
    std::vector<double> s(n);
    std::vector<Label> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = instances % 2 ? uniform01(rng) : std::floor(uniform(rng, 0, 4));
      y[i] = uniform01(rng) < 0.35 ? Label::anomaly : Label::normal;
    }
    const auto pos = std::count(y.begin(), y.end(), Label::anomaly);
    if (pos == 0 || pos == static_cast<long>(n)) continue;
    ++instances;

    double num = 0.0, den = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b)
        if (y[a] == Label::anomaly && y[b] == Label::normal) {
          num += s[a] > s[b] ? 1.0 : s[a] == s[b] ? 0.5 : 0.0;
          den += 1.0;
        }
    worst_roc = std::max(worst_roc, std::abs(roc_auc(s, y) - num / den));

    std::set<double, std::greater<>> thresholds(s.begin(), s.end());
    double ap = 0.0, prev = 0.0;
    for (double t : thresholds) {
      double tp = 0.0, flagged = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (s[i] >= t) {
          flagged += 1.0;
          tp += y[i] == Label::anomaly;
        }
      ap += (tp / static_cast<double>(pos) - prev) * tp / flagged;
      prev = tp / static_cast<double>(pos);
    }
    worst_pr = std::max(worst_pr, std::abs(pr_auc(s, y) - ap));
  }
  return {worst_roc <= 1e-12 && worst_pr <= 1e-12,
          "200 instances, max |roc - pairwise| = " + sci(worst_roc) + ", max |pr - curve| = " + sci(worst_pr)};
}

Outcome rcs_invariants() {
  std::size_t size_bad = 0, det_bad = 0, split_bad = 0, clusters = 0;
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    Rng rng = make_rng(inst, 9001);
    const std::size_t n = 20 + rng() % 300, d = 1 + rng() % 5;
    Matrix x = gaussian(n, d, rng);
    for (std::size_t i = 0; i < n; ++i) x(i, 0) += 5.0 * static_cast<double>(rng() % 4);
    const ContextOptions opt{1 + rng() % 150, 1 + rng() % 15, inst};
    const ContextSet ctx = build_context(x, opt);
    size_bad += ctx.size() != std::min(opt.budget, n);
    det_bad += build_context(x, opt).source_indices != ctx.source_indices;
    if (n <= opt.budget) continue;

    // Exhaustive: per cluster, sort members by (distance, index); the picks
    // must be the ⌈q/2⌉ nearest and ⌊q/2⌋ farthest.
    const KMeansResult km = kmeans(x, std::min(opt.k, n), opt.seed, opt.max_iters);
    const std::set<std::size_t> chosen(ctx.source_indices.begin(), ctx.source_indices.end());
    for (std::size_t c = 0; c < km.k; ++c) {
      std::vector<std::pair<double, std::size_t>> members;
      for (std::size_t i = 0; i < n; ++i) {
        if (km.assignment[i] != c) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (x(i, j) - km.centroids(c, j)) * (x(i, j) - km.centroids(c, j));
        members.emplace_back(s, i);
      }
      std::sort(members.begin(), members.end());
      std::size_t q = 0;
      for (const auto& m : members) q += chosen.count(m.second);
      std::set<std::size_t> expect;
      for (std::size_t t = 0; t < (q + 1) / 2; ++t) expect.insert(members[t].second);
      for (std::size_t t = 0; t < q / 2; ++t) expect.insert(members[members.size() - 1 - t].second);
      std::set<std::size_t> got;
      for (const auto& m : members)
        if (chosen.count(m.second)) got.insert(m.second);
      split_bad += got != expect;
      ++clusters;
    }
  }
  return {size_bad == 0 && det_bad == 0 && split_bad == 0,
          "50 instances: size violations " + std::to_string(size_bad) + ", nondeterministic " +
              std::to_string(det_bad) + ", near/far mismatches " + std::to_string(split_bad) + " of " +
              std::to_string(clusters) + " clusters"};
}

Outcome heteroscedastic() {
  std::size_t full_pass = 0, nu_pass = 0;
  const std::size_t trials = 100;
  for (std::uint64_t t = 0; t < trials; ++t) {
    HeteroSpec spec;
    spec.seed = t;
    const HeteroData h = gen_hetero(spec);
    ExperimentConfig cfg;
    cfg.encoder.batch_size = 64;
    cfg.variance.batch_size = 32;
    cfg.variance.cache_mu = true;
    const Pipeline full = fit_pipeline(h.rows, Mode::full, t, cfg);
    const Pipeline no_unc(full.context(), full.encoder(), std::nullopt, full.kind());
    const HeteroProbes pr = hetero_probes(spec);
    full_pass += score(full, pr.a).score > score(full, pr.b).score;
    nu_pass += score(no_unc, pr.a).score > score(no_unc, pr.b).score;
  }
  const double rf = static_cast<double>(full_pass) / trials, rn = static_cast<double>(nu_pass) / trials;
  return {rf >= 0.95 && rn < rf, "score(a) > score(b): full " + std::to_string(full_pass) + "/100 (need >= 95), " +
                                     "no-uncertainty " + std::to_string(nu_pass) + "/100 (need < full)"};
}

struct DepRuns {
  double full = 0, no_unc = 0, cart = 0, orig = 0, zscore = 0;
  double pilot_full = 0;
  double threshold = 0, margin = 0, slack = 0;
};

DepRuns run_dependency_fixture() {
  std::ifstream in(std::string(DEPSCORE_FIXTURES) + "/pilot_oracle.json");
  const auto oracle = nlohmann::json::parse(in);
  const auto& g = oracle.at("generator");
  const auto& run = oracle.at("run");
  DepAnomalySpec spec;
  spec.d = g.at("d");
  spec.n_normal = g.at("n_normal");
  spec.n_anomaly = g.at("n_anomaly");
  spec.noise_sd = g.at("noise_sd");
  spec.min_violation = g.at("min_violation");
  spec.seed = g.at("seed");
  const LabeledDataset ds = gen_dep_anomalies(spec).dataset;

  ExperimentConfig cfg;
  cfg.train_fraction = run.at("train_fraction");
  cfg.encoder.batch_size = run.at("encoder_batch_size");
  cfg.variance.batch_size = run.at("variance_batch_size");
  cfg.variance.cache_mu = run.at("cache_mu");
  const auto seeds = run.at("seeds").get<std::vector<std::uint64_t>>();

  DepRuns r;
  r.full = run_experiment(ds, Mode::full, seeds, cfg).roc_mean;
  r.no_unc = run_experiment(ds, Mode::no_uncertainty, seeds, cfg).roc_mean;
  r.cart = run_experiment(ds, Mode::cart, seeds, cfg).roc_mean;
  r.orig = run_experiment(ds, Mode::original_space, seeds, cfg).roc_mean;
  for (const auto s : seeds) {
    const Split sp = split(ds, SplitSpec{cfg.train_fraction, s});
    r.zscore += roc_auc(marginal_zscore_scores(sp.train, sp.test), sp.test_labels) / static_cast<double>(seeds.size());
  }
  r.pilot_full = oracle.at("pilot_roc_auc_mean").at("full");
  r.threshold = oracle.at("threshold").at("full_min_roc_auc");
  r.margin = oracle.at("threshold").at("full_minus_zscore_min");
  r.slack = oracle.at("threshold").at("ablation_slack");
  return r;
}

Outcome dependency_detection(const DepRuns& r) {
  const bool pilot_ok = r.pilot_full >= r.threshold;
  return {pilot_ok && r.full >= r.threshold && r.full - r.zscore >= r.margin,
          "mean ROC-AUC over 5 seeds: full " + fmt(r.full) + " (need >= " + fmt(r.threshold, 2) + "), z-score " +
              fmt(r.zscore) + ", gap " + fmt(r.full - r.zscore) + " (need >= " + fmt(r.margin, 2) + "), pilot " +
              fmt(r.pilot_full, 3)};
}

Outcome ablation_ordering(const DepRuns& r) {
  const bool ok = r.full >= r.no_unc - r.slack && r.full >= r.cart - r.slack && r.full >= r.orig - r.slack;
  return {ok, "mean ROC-AUC: full " + fmt(r.full) + ", no-uncertainty " + fmt(r.no_unc) + ", original-space " +
                  fmt(r.orig) + ", cart " + fmt(r.cart) + " (full >= each - " + fmt(r.slack, 2) + ")"};
}

Outcome complexity() {
  DepAnomalySpec spec;
  spec.seed = 7;
  const LabeledDataset ds = gen_dep_anomalies(spec).dataset;
  const Split sp = split(ds, SplitSpec{0.7, 0});
  std::vector<double> times;
  for (const std::size_t budget : {125u, 250u, 500u}) {
    ExperimentConfig cfg;
    cfg.context.budget = budget;
    cfg.encoder.epochs = 1;
    cfg.encoder.batch_size = 256;
    cfg.variance.epochs = 1;
    cfg.variance.batch_size = 256;
    cfg.variance.cache_mu = true;
    const Pipeline pipe = fit_pipeline(sp.train, Mode::full, 0, cfg);
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = Clock::now();
      const auto s = score_batch(pipe, ds.features);
      best = std::min(best, seconds_since(t0));
      if (s.size() != ds.n()) return {false, "score_batch returned the wrong length"};
    }
    times.push_back(best);
  }
  const double r1 = times[1] / times[0], r2 = times[2] / times[1];
  return {r1 <= 3.0 && r2 <= 3.0, "scoring " + std::to_string(ds.n()) + " rows: |C|=125 " + fmt(times[0], 3) +
                                      " s, 250 " + fmt(times[1], 3) + " s, 500 " + fmt(times[2], 3) +
                                      " s; doubling ratios " + fmt(r1, 2) + ", " + fmt(r2, 2) + " (need <= 3.00)"};
}

Outcome determinism() {
  DepAnomalySpec spec;
  spec.n_normal = 950;
  spec.n_anomaly = 50;
  spec.seed = 7;
  const LabeledDataset ds = gen_dep_anomalies(spec).dataset;
  const fs::path root = fs::temp_directory_path() / ("depscore_acceptance_" + std::to_string(::getpid()));
  std::string detail;
  bool ok = true;
  for (const Mode mode : {Mode::full, Mode::cart}) {
    std::vector<std::string> bytes[2];
    for (int run = 0; run < 2; ++run) {
      ExperimentConfig cfg;
      cfg.encoder.batch_size = 128;
      cfg.variance.batch_size = 128;
      const Split sp = split(ds, SplitSpec{0.7, 3});
      const Pipeline pipe = fit_pipeline(sp.train, mode, 3, cfg);
      const fs::path dir = root / (mode_name(mode) + std::to_string(run));
      save_pipeline(dir, pipe, {{"seed", 3}});
      std::ostringstream scores;
      write_scores_csv(scores, score_batch(load_pipeline(dir), sp.test));
      for (const char* f : {"context.txt", "encoder.json", "variance.json", "manifest.json"})
        bytes[run].push_back(read_file(dir / f));
      bytes[run].push_back(scores.str());
    }
    const bool same = bytes[0] == bytes[1];
    ok = ok && same;
    detail += (detail.empty() ? "" : ", ") + std::string(mode == Mode::full ? "kernel" : "cart") +
              (same ? " identical" : " DIFFERENT");
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  return {ok, "artifacts + score file over two runs: " + detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double max_seconds;
    std::function<Outcome()> run;
  };
  std::optional<DepRuns> dep;
  auto dep_runs = [&]() -> const DepRuns& {
    if (!dep) dep = run_dependency_fixture();
    return *dep;
  };
  const std::vector<Criterion> criteria{
      {"score arithmetic (worked example)", 1, worked_example},
      {"gradient checks", 30, gradient_checks},
      {"metric oracles", 10, metric_oracles},
      {"context-set invariants", 10, rcs_invariants},
      {"heteroscedastic behavior", 300, heteroscedastic},
      {"dependency-anomaly detection", 600, [&] { return dependency_detection(dep_runs()); }},
      {"ablation ordering", 600, [&] { return ablation_ordering(dep_runs()); }},
      {"inference scales linearly in |C|", 120, complexity},
      {"determinism", 300, determinism},
  };

  std::size_t failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = secs < c.max_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << c.name << ": " << o.detail << " [" << fmt(secs, 2)
              << " s, limit " << fmt(c.max_seconds, 0) << " s" << (in_time ? "" : ", TOO SLOW") << "]\n"
              << std::flush;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
