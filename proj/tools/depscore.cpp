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

// depscore command-line tool.
//
//   depscore train   --data d.csv --out model/
//   depscore score   --model model/ --data rows.csv [--out scores.csv]
//   depscore explain --model model/ --data rows.csv --row 3
//   depscore bench   --data a.csv --data b.csv --seeds 0,1,2 --out results/
//   depscore ablate  --data a.csv --seeds 0,1,2 --out results/
//   depscore sweep   --data a.csv --latent-caps 2,5,8 --out results/
//   depscore gen     --kind dep --n 2000 --d 8 --out dep.csv
//   depscore compare --matrix methods.csv
//
// `--config FILE` reads key=value lines (same names as the long flags);
// flags given on the command line win.
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 predictor, 4 numeric.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "depscore/depscore.hpp"

namespace fs = std::filesystem;
using namespace depscore;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kPredictor = 3, kNumeric = 4 };

class UsageError : public Error {
 public:
  using Error::Error;
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const PredictorUnavailable*>(&e)) return kPredictor;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const UndefinedMetric*>(&e)) return kNumeric;
  if (dynamic_cast<const IngestError*>(&e) || dynamic_cast<const StructuralError*>(&e)) return kData;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return kData;
  return kUsage;
}

struct Options {
  // data
  std::vector<std::string> data;
  std::string label_col = "label";
  std::string anomaly_value = "1";
  // context / latent / predictor
  std::size_t budget = 500;
  std::size_t kmeans_k = 100;
  std::size_t latent_cap = 100;
  std::string predictor = "kernel";
  std::string endpoint;
  double timeout = 60.0;
  bool context_prescale = false;
  // training
  std::size_t epochs = 20;
  std::size_t batch_size = 1024;
  double lr = 5e-4;
  std::size_t var_epochs = 50;
  std::size_t var_batch_size = 1024;
  double var_lr = 1e-3;
  bool cache_mu = false;
  double train_fraction = 0.7;
  // run
  std::string seeds = "0,1,2,3,4";
  std::string mode = "full";
  std::string out;
  std::size_t threads = 0;
  // score / explain
  std::string model;
  long long row = -1;
  // sweep
  std::string latent_caps = "2,5,10";
  // gen
  std::string kind = "dep";
  std::size_t n = 2000;
  std::size_t d = 8;
  double anomaly_rate = 0.05;
  std::size_t factors = 0;
  double noise = 0.1;
  std::uint64_t seed = 0;
  // compare
  std::string matrix;
  std::string reference;
  bool two_sided_wilcoxon = false;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = std::string(detail::trim(tok));
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("bad integer '" + tok + "' in list '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list '" + s + "'");
  return out;
}

PredictorKind make_kind(const Options& o) {
  if (o.predictor == "kernel") return KernelIcr{};
  if (o.predictor == "cart") return Cart{};
  if (o.predictor == "external") {
    if (o.endpoint.empty()) throw UsageError("--predictor external needs --endpoint");
    return External{o.endpoint, o.timeout};
  }
  throw UsageError("unknown predictor '" + o.predictor + "' (kernel, cart, external)");
}

ExperimentConfig make_experiment(const Options& o) {
  ExperimentConfig c;
  c.train_fraction = o.train_fraction;
  c.context.budget = o.budget;
  c.context.k = o.kmeans_k;
  c.context.prescale = o.context_prescale;
  c.latent_cap = o.latent_cap;
  c.predictor = make_kind(o);
  c.encoder.epochs = o.epochs;
  c.encoder.batch_size = o.batch_size;
  c.encoder.lr_start = o.lr;
  c.variance.epochs = o.var_epochs;
  c.variance.batch_size = o.var_batch_size;
  c.variance.lr = o.var_lr;
  c.variance.cache_mu = o.cache_mu;
  return c;
}

nlohmann::json options_json(const Options& o) {
  return {{"data", o.data},
          {"label_col", o.label_col},
          {"anomaly_value", o.anomaly_value},
          {"budget", o.budget},
          {"kmeans_k", o.kmeans_k},
          {"latent_cap", o.latent_cap},
          {"predictor", o.predictor},
          {"endpoint", o.endpoint},
          {"context_prescale", o.context_prescale},
          {"epochs", o.epochs},
          {"batch_size", o.batch_size},
          {"lr", o.lr},
          {"var_epochs", o.var_epochs},
          {"var_batch_size", o.var_batch_size},
          {"var_lr", o.var_lr},
          {"cache_mu", o.cache_mu},
          {"seeds", o.seeds},
          {"mode", o.mode}};
}

std::size_t worker_count(const Options& o, std::size_t jobs) {
  std::size_t n = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DEPSCORE_THREADS")) {
    const long cap = std::atol(env);
    if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  file.open(path);
  if (!file) throw IngestError("cannot write '" + path + "'");
  return file;
}

// ---------------------------------------------------------------------------
// train / score / explain

int cmd_train(const Options& o) {
  if (o.data.size() != 1) throw UsageError("train takes exactly one --data");
  if (o.out.empty()) throw UsageError("train needs --out DIR");
  const Mode mode = parse_mode(o.mode);
  const std::uint64_t seed = parse_seed_list(o.seeds).front();
  const LabeledDataset ds = load_csv(o.data[0], o.label_col, o.anomaly_value);
  std::vector<std::size_t> normal_rows;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (ds.labels[i] == Label::normal) normal_rows.push_back(i);
  const Matrix train = select_rows(ds.features, normal_rows);
  const Pipeline pipe = fit_pipeline(train, mode, seed, make_experiment(o));

  nlohmann::json cfg = options_json(o);
  cfg["seed"] = seed;
  cfg["feature_names"] = ds.feature_names;
  cfg["train_rows"] = train.rows();
  cfg["data_hash"] = fnv1a_hex(read_file(o.data[0]));
  save_pipeline(o.out, pipe, cfg);
  std::cerr << "trained on " << train.rows() << " normal rows (d = " << pipe.d() << ", p = " << pipe.p()
            << ", |C| = " << pipe.context().size() << ") -> " << o.out << '\n';
  return kOk;
}

int cmd_score(const Options& o) {
  if (o.model.empty() || o.data.size() != 1) throw UsageError("score needs --model DIR and one --data");
  const Pipeline pipe = load_pipeline(o.model);
  const FeatureTable t = load_feature_csv(o.data[0], o.label_col);
  if (t.features.cols() != pipe.d())
    throw StructuralError(o.data[0] + ": " + std::to_string(t.features.cols()) + " feature columns, model expects " +
                          std::to_string(pipe.d()));
  const auto scores = score_batch(pipe, t.features);
  std::ofstream file;
  write_scores_csv(open_out(o.out, file), scores);
  return kOk;
}

int cmd_explain(const Options& o) {
  if (o.model.empty() || o.data.size() != 1) throw UsageError("explain needs --model DIR and one --data");
  const Pipeline pipe = load_pipeline(o.model);
  const FeatureTable t = load_feature_csv(o.data[0], o.label_col);
  if (t.features.cols() != pipe.d())
    throw StructuralError(o.data[0] + ": feature count does not match the model");
  if (o.row < 0 || static_cast<std::size_t>(o.row) >= t.features.rows())
    throw UsageError("--row " + std::to_string(o.row) + " out of range (" + std::to_string(t.features.rows()) +
                     " rows)");
  const auto row = static_cast<std::size_t>(o.row);
  const auto x = t.features.row(row);
  ScoreReport rep = score(pipe, x);
  rep.feature_attribution = attribute_features(pipe, rep, x);
  const Matrix xn = normalize(Matrix::row_vector(x), pipe.context().stats);
  const auto j = report_to_json(rep, row, t.feature_names, x, xn.row(0));
  const double diff = j.at("attribution_check").at("abs_diff").get<double>();
  const double tol = 1e-9 * std::max(1.0, std::abs(rep.score) * static_cast<double>(pipe.p()));
  std::ofstream file;
  open_out(o.out, file) << j.dump(2) << '\n';
  std::cerr << "attribution check: |sum(attribution) - sum(contribution)| = " << diff
            << (diff <= tol ? " (ok)" : " (FAILED)") << '\n';
  if (diff > tol) throw NumericError("attribution sum check failed");
  return kOk;
}

// ---------------------------------------------------------------------------
// bench / ablate / sweep

struct Job {
  std::size_t dataset = 0;
  Mode mode = Mode::full;
  std::size_t latent_cap = 0;  ///< 0 = use --latent-cap
};

struct JobResult {
  std::optional<MetricResult> metrics;
  std::string error;
  int code = kOk;
  bool skipped = false;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

/// Ranks (1 = best) of `v` in descending order, ties share the mean rank.
std::vector<double> descending_ranks(const std::vector<double>& v) {
  std::vector<double> neg(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
  return midranks(neg);
}

int run_grid(const Options& o, const std::string& command) {
  if (o.data.empty()) throw UsageError(command + " needs at least one --data");
  if (o.out.empty()) throw UsageError(command + " needs --out DIR");
  const auto seeds = parse_seed_list(o.seeds);
  const ExperimentConfig base = make_experiment(o);

  std::vector<Mode> modes{parse_mode(o.mode)};
  if (command == "ablate") modes = {Mode::full, Mode::no_uncertainty, Mode::cart, Mode::original_space};
  std::vector<std::size_t> caps{0};
  if (command == "sweep") {
    caps.clear();
    for (auto c : parse_seed_list(o.latent_caps)) {
      if (c == 0) throw UsageError("--latent-caps entries must be >= 1");
      caps.push_back(static_cast<std::size_t>(c));
    }
  }

  // Datasets load up front so ingest errors are reported per dataset.
  std::vector<std::optional<LabeledDataset>> datasets(o.data.size());
  std::vector<std::string> load_errors(o.data.size());
  std::vector<int> load_codes(o.data.size(), kOk);
  for (std::size_t i = 0; i < o.data.size(); ++i) {
    try {
      datasets[i] = load_csv(o.data[i], o.label_col, o.anomaly_value);
    } catch (const std::exception& e) {
      load_errors[i] = e.what();
      load_codes[i] = exit_code_for(e);
    }
  }

  std::vector<Job> jobs;
  for (std::size_t i = 0; i < o.data.size(); ++i)
    for (Mode m : modes)
      for (std::size_t c : caps) jobs.push_back({i, m, c});
  std::vector<JobResult> results(jobs.size());

  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      const Job& job = jobs[k];
      JobResult& r = results[k];
      if (!datasets[job.dataset]) {
        r.error = load_errors[job.dataset];
        r.code = load_codes[job.dataset];
        continue;
      }
      const LabeledDataset& ds = *datasets[job.dataset];
      ExperimentConfig cfg = base;
      if (job.latent_cap) cfg.latent_cap = job.latent_cap;
      if (job.mode == Mode::original_space && ds.d() > cfg.original_space_dim_limit) {
        r.skipped = true;
        r.error = "original-space skipped (d > " + std::to_string(cfg.original_space_dim_limit) + ")";
        continue;
      }
      try {
        r.metrics = run_experiment(ds, job.mode, seeds, cfg);
      } catch (const std::exception& e) {
        r.error = e.what();
        r.code = exit_code_for(e);
      }
      std::lock_guard<std::mutex> lock(log_mu);
      std::cerr << command << ": " << ds.name << " / " << mode_name(job.mode);
      if (job.latent_cap) std::cerr << " / cap " << job.latent_cap;
      std::cerr << (r.metrics ? " done" : " FAILED: " + r.error) << '\n';
    }
  };
  const std::size_t n_workers = worker_count(o, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(o.out);
  const bool sweep = command == "sweep";
  auto name_of = [&](std::size_t i) {
    return datasets[i] ? datasets[i]->name : fs::path(o.data[i]).stem().string();
  };

  std::ofstream runs(fs::path(o.out) / "runs.csv");
  runs << "dataset,mode," << (sweep ? "latent_cap," : "") << "seed,roc_auc,pr_auc,wall_clock_s\n";
  std::ofstream agg(fs::path(o.out) / "aggregate.csv");
  agg << "dataset,mode," << (sweep ? "latent_cap," : "") << "seeds,roc_auc_mean,roc_auc_std,pr_auc_mean,pr_auc_std\n";
  int code = kOk;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const Job& job = jobs[k];
    const JobResult& r = results[k];
    if (!r.metrics) {
      if (!r.skipped && code == kOk) code = r.code;
      continue;
    }
    const std::string prefix = name_of(job.dataset) + "," + mode_name(job.mode) + "," +
                               (sweep ? std::to_string(job.latent_cap) + "," : "");
    const MetricResult& m = *r.metrics;
    for (std::size_t s = 0; s < m.seeds.size(); ++s)
      runs << prefix << m.seeds[s] << ',' << format_double(m.roc_auc[s]) << ',' << format_double(m.pr_auc[s])
           << ',' << fmt(m.wall_clock_s[s], 3) << '\n';
    agg << prefix << m.seeds.size() << ',' << format_double(m.roc_mean) << ',' << format_double(m.roc_std) << ','
        << format_double(m.pr_mean) << ',' << format_double(m.pr_std) << '\n';
  }

  // Text report: one row per dataset, one column per mode (or cap), cells
  // "roc_auc (rank)", rank 1 = best within the row.
  std::vector<std::string> columns;
  for (Mode m : modes)
    for (std::size_t c : caps) columns.push_back(sweep ? "p<=" + std::to_string(c) : mode_name(m));
  std::ofstream rep(fs::path(o.out) / "report.txt");
  rep << command << ": mean ROC-AUC over seeds {" << o.seeds << "}, cell = value (rank)\n\n";
  rep << std::left << std::setw(24) << "dataset";
  for (const auto& c : columns) rep << std::setw(20) << c;
  rep << '\n';
  std::vector<double> rank_sum(columns.size(), 0.0);
  std::vector<std::size_t> rank_n(columns.size(), 0);
  const std::size_t per_ds = columns.size();
  for (std::size_t i = 0; i < o.data.size(); ++i) {
    std::vector<double> vals;
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < per_ds; ++c) {
      const JobResult& r = results[i * per_ds + c];
      if (r.metrics) {
        vals.push_back(r.metrics->roc_mean);
        present.push_back(c);
      }
    }
    const auto ranks = descending_ranks(vals);
    rep << std::setw(24) << name_of(i);
    std::size_t v = 0;
    for (std::size_t c = 0; c < per_ds; ++c) {
      const JobResult& r = results[i * per_ds + c];
      std::string cell = r.skipped ? "skipped" : "failed";
      if (v < present.size() && present[v] == c) {
        cell = fmt(vals[v]) + " (" + fmt(ranks[v], ranks[v] == std::floor(ranks[v]) ? 0 : 1) + ")";
        rank_sum[c] += ranks[v];
        ++rank_n[c];
        ++v;
      }
      rep << std::setw(20) << cell;
    }
    rep << '\n';
  }
  rep << std::setw(24) << "mean rank";
  for (std::size_t c = 0; c < per_ds; ++c)
    rep << std::setw(20) << (rank_n[c] ? fmt(rank_sum[c] / static_cast<double>(rank_n[c]), 2) : "-");
  rep << '\n';
  for (std::size_t k = 0; k < jobs.size(); ++k)
    if (!results[k].metrics)
      rep << "\n" << name_of(jobs[k].dataset) << " / " << mode_name(jobs[k].mode) << ": " << results[k].error;
  rep << '\n';
  std::cerr << "wrote " << (fs::path(o.out) / "runs.csv").string() << ", aggregate.csv, report.txt\n";
  return code;
}

// ---------------------------------------------------------------------------
// gen / compare

std::string sidecar_path(const std::string& csv) {
  fs::path p(csv);
  p.replace_extension(".truth.json");
  return p.string();
}

int cmd_gen(const Options& o) {
  if (o.out.empty()) throw UsageError("gen needs --out FILE.csv");
  if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  if (o.kind == "dep") {
    DepAnomalySpec spec;
    spec.d = o.d;
    spec.n_anomaly = static_cast<std::size_t>(std::llround(o.anomaly_rate * static_cast<double>(o.n)));
    if (spec.n_anomaly > o.n) throw UsageError("--anomaly-rate must be in [0, 1]");
    spec.n_normal = o.n - spec.n_anomaly;
    spec.factors = o.factors;
    spec.noise_sd = o.noise;
    spec.seed = o.seed;
    const DepAnomalyData data = gen_dep_anomalies(spec);
    write_csv(o.out, data.dataset, o.label_col);
    write_json_file(sidecar_path(o.out), dep_truth_json(spec, data));
  } else if (o.kind == "hetero") {
    HeteroSpec spec;
    spec.n = o.n;
    spec.seed = o.seed;
    const HeteroData h = gen_hetero(spec);
    write_csv(o.out, hetero_dataset(h), o.label_col);
    write_json_file(sidecar_path(o.out), hetero_truth_json(spec, h));
  } else {
    throw UsageError("unknown --kind '" + o.kind + "' (dep, hetero)");
  }
  std::cerr << "wrote " << o.out << " and " << sidecar_path(o.out) << '\n';
  return kOk;
}

int cmd_compare(const Options& o) {
  if (o.matrix.empty()) throw UsageError("compare needs --matrix FILE.csv");
  const MethodMatrix mm = load_method_matrix(o.matrix);
  const Matrix rho = spearman_matrix(mm);
  const Matrix dist = corr_distance(mm);
  std::size_t ref = 0;
  if (!o.reference.empty()) {
    const auto it = std::find(mm.methods.begin(), mm.methods.end(), o.reference);
    if (it == mm.methods.end()) throw UsageError("--reference '" + o.reference + "' is not a method column");
    ref = static_cast<std::size_t>(it - mm.methods.begin());
  }
  std::ofstream file;
  std::ostream& out = open_out(o.out, file);
  auto table = [&](const char* title, const Matrix& m) {
    out << title << '\n' << std::left << std::setw(16) << "";
    for (const auto& name : mm.methods) out << std::setw(12) << name;
    out << '\n';
    for (std::size_t u = 0; u < m.rows(); ++u) {
      out << std::setw(16) << mm.methods[u];
      for (std::size_t v = 0; v < m.cols(); ++v) out << std::setw(12) << fmt(m(u, v));
      out << '\n';
    }
    out << '\n';
  };
  table("spearman", rho);
  table("distance sqrt(2(1-rho))", dist);
  out << "wilcoxon signed-rank, " << mm.methods[ref] << " vs others ("
      << (o.two_sided_wilcoxon ? "two-sided" : "one-sided, greater") << ")\n";
  const auto a = mm.method_column(ref);
  for (std::size_t m = 0; m < mm.methods.size(); ++m) {
    if (m == ref) continue;
    out << std::left << std::setw(16) << mm.methods[m];
    try {
      out << fmt(wilcoxon_signed_rank(a, mm.method_column(m), o.two_sided_wilcoxon), 6) << '\n';
    } catch (const UndefinedMetric& e) {
      out << "undefined (" << e.what() << ")\n";
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// Config file: key=value lines become "--key value" arguments unless the key
// was given on the command line.

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (config_path.empty()) return out;
  std::ifstream in(config_path);
  if (!in) throw UsageError("cannot read config file '" + config_path + "'");
  auto given = [&](const std::string& key) {
    for (const auto& a : out)
      if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
    return false;
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view s = detail::trim(line);
    if (s.empty() || s.front() == '#' || s.front() == ';' || s.front() == '[') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw UsageError(config_path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key(detail::trim(s.substr(0, eq)));
    std::string value(detail::trim(s.substr(eq + 1)));
    std::replace(key.begin(), key.end(), '_', '-');
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front())
      value = value.substr(1, value.size() - 2);
    if (given(key)) continue;
    if (value == "true") {
      out.push_back("--" + key);
    } else if (value != "false") {
      out.push_back("--" + key);
      out.push_back(value);
    }
  }
  return out;
}

void add_data_options(CLI::App* sub, Options& o) {
  sub->add_option("--data", o.data, "Input CSV (repeat for several datasets)");
  sub->add_option("--label-col", o.label_col, "Label column name")->capture_default_str();
  sub->add_option("--anomaly-value", o.anomaly_value, "Label value marking anomalies")->capture_default_str();
}

void add_model_options(CLI::App* sub, Options& o) {
  sub->add_option("--budget", o.budget, "Context-set budget c")->capture_default_str();
  sub->add_option("--kmeans-k", o.kmeans_k, "k-means clusters for the context set")->capture_default_str();
  sub->add_option("--latent-cap", o.latent_cap, "Latent dimension cap")->capture_default_str();
  sub->add_option("--predictor", o.predictor, "kernel | cart | external")->capture_default_str();
  sub->add_option("--endpoint", o.endpoint, "External predictor: shell command or tcp://host:port");
  sub->add_option("--timeout", o.timeout, "External predictor response timeout (s)")->capture_default_str();
  sub->add_flag("--context-prescale", o.context_prescale, "Normalize before k-means");
  sub->add_option("--epochs", o.epochs, "Encoder epochs")->capture_default_str();
  sub->add_option("--batch-size", o.batch_size, "Encoder batch size")->capture_default_str();
  sub->add_option("--lr", o.lr, "Encoder start learning rate")->capture_default_str();
  sub->add_option("--var-epochs", o.var_epochs, "Variance-net epochs")->capture_default_str();
  sub->add_option("--var-batch-size", o.var_batch_size, "Variance-net batch size")->capture_default_str();
  sub->add_option("--var-lr", o.var_lr, "Variance-net learning rate")->capture_default_str();
  sub->add_flag("--cache-mu", o.cache_mu, "Compute conditional means once per row during variance training");
  sub->add_option("--seeds", o.seeds, "Comma-separated seeds")->capture_default_str();
  sub->add_option("--mode", o.mode, "full | no-uncertainty | cart | original-space")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"depscore: dependency-based anomaly scoring"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  auto* train = app.add_subcommand("train", "Fit a pipeline on the normal rows of a dataset");
  add_data_options(train, o);
  add_model_options(train, o);
  train->add_option("--out", o.out, "Model directory")->required();

  auto* score_cmd = app.add_subcommand("score", "Score rows with a trained model");
  add_data_options(score_cmd, o);
  score_cmd->add_option("--model", o.model, "Model directory")->required();
  score_cmd->add_option("--out", o.out, "Output CSV (default stdout)");

  auto* explain = app.add_subcommand("explain", "Per-dimension report for one row");
  add_data_options(explain, o);
  explain->add_option("--model", o.model, "Model directory")->required();
  explain->add_option("--row", o.row, "Zero-based row id")->required();
  explain->add_option("--out", o.out, "Output JSON (default stdout)");

  std::vector<CLI::App*> grid;
  for (const char* name : {"bench", "ablate", "sweep"}) {
    auto* sub = app.add_subcommand(name, std::string(name) == "bench"    ? "Run one mode over datasets and seeds"
                                         : std::string(name) == "ablate" ? "Run all ablation modes"
                                                                          : "Vary the latent cap");
    add_data_options(sub, o);
    add_model_options(sub, o);
    sub->add_option("--train-fraction", o.train_fraction, "Share of normal rows used for training")
        ->capture_default_str();
    sub->add_option("--threads", o.threads, "Worker threads (capped by DEPSCORE_THREADS)");
    sub->add_option("--out", o.out, "Results directory")->required();
    if (std::string(name) == "sweep")
      sub->add_option("--latent-caps", o.latent_caps, "Comma-separated latent caps")->capture_default_str();
    grid.push_back(sub);
  }

  auto* gen = app.add_subcommand("gen", "Write a synthetic fixture CSV and its truth sidecar");
  gen->add_option("--kind", o.kind, "dep | hetero")->capture_default_str();
  gen->add_option("--n", o.n, "Rows")->capture_default_str();
  gen->add_option("--d", o.d, "Features (dep)")->capture_default_str();
  gen->add_option("--anomaly-rate", o.anomaly_rate, "Anomaly share (dep)")->capture_default_str();
  gen->add_option("--factors", o.factors, "Independent factors, 0 = ceil(d/2) (dep)")->capture_default_str();
  gen->add_option("--noise", o.noise, "Noise sd of dependent features (dep)")->capture_default_str();
  gen->add_option("--seed", o.seed, "Generator seed")->capture_default_str();
  gen->add_option("--label-col", o.label_col, "Label column name")->capture_default_str();
  gen->add_option("--out", o.out, "Output CSV")->required();

  auto* compare = app.add_subcommand("compare", "Rank correlation and Wilcoxon tests over a method matrix");
  compare->add_option("--matrix", o.matrix, "CSV: dataset,<method>,<method>,...")->required();
  compare->add_option("--reference", o.reference, "Method tested against the others (default: first)");
  compare->add_flag("--two-sided-wilcoxon", o.two_sided_wilcoxon, "Two-sided instead of one-sided p-values");
  compare->add_option("--out", o.out, "Output file (default stdout)");

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(o);
    if (score_cmd->parsed()) return cmd_score(o);
    if (explain->parsed()) return cmd_explain(o);
    for (auto* sub : grid)
      if (sub->parsed()) return run_grid(o, sub->get_name());
    if (gen->parsed()) return cmd_gen(o);
    if (compare->parsed()) return cmd_compare(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kUsage;
}
