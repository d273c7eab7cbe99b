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

// Uncertainty-normalized dependency scoring.
//
//   s(x) = (1/p) Σ_j (z_j − μ̂_j)² / σ̂²_j
//
// where z = encode(normalize(x)), μ̂_j comes from the frozen predictor with
// the encoded context set, and σ̂²_j from variance net j. Larger is more
// anomalous. Each test row is scored independently of every other row.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "depscore/context.hpp"
#include "depscore/data.hpp"
#include "depscore/errors.hpp"
#include "depscore/latent.hpp"
#include "depscore/predictor.hpp"
#include "depscore/uncertainty.hpp"

namespace depscore {

/// Gaussian NLL with every constant kept: ½ (r²/σ² + log σ² + log 2π).
inline double nll_full(double residual, double sigma_sq) {
  if (!(sigma_sq > 0.0)) throw NumericError("nll_full: variance must be positive");
  return 0.5 * (residual * residual / sigma_sq + std::log(sigma_sq) +
                std::log(2.0 * std::numbers::pi));
}

struct DimReport {
  double z = 0.0;
  double mu_hat = 0.0;
  double residual = 0.0;
  double sigma_sq = 1.0;
  double contribution = 0.0;  ///< residual² / σ̂²
  double nll_full = 0.0;
};

struct ScoreReport {
  double score = 0.0;
  std::vector<DimReport> per_dim;
  std::vector<double> feature_attribution;  ///< filled by attribute_features
};

/// Assembles a report from per-dimension latent values, conditional means and
/// variances. The score is the mean of the stored contributions.
inline ScoreReport report_from_components(std::span<const double> z, std::span<const double> mu_hat,
                                          std::span<const double> sigma_sq) {
  if (z.size() != mu_hat.size() || z.size() != sigma_sq.size() || z.empty())
    throw StructuralError("report_from_components: length mismatch");
  ScoreReport r;
  double total = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    DimReport d;
    d.z = z[j];
    d.mu_hat = mu_hat[j];
    d.residual = z[j] - mu_hat[j];
    d.sigma_sq = sigma_sq[j];
    d.contribution = d.residual * d.residual / d.sigma_sq;
    d.nll_full = nll_full(d.residual, d.sigma_sq);
    total += d.contribution;
    r.per_dim.push_back(d);
  }
  r.score = total / static_cast<double>(z.size());
  return r;
}

/// Everything needed to score: context set, encoder, optional variance nets
/// (absent ⇒ σ̂² ≡ 1) and the frozen predictor. Immutable once built.
class Pipeline {
 public:
  Pipeline(ContextSet ctx, EncoderModel enc, std::optional<VarianceModel> var, PredictorKind kind)
      : ctx_(std::move(ctx)),
        enc_(std::move(enc)),
        var_(std::move(var)),
        predictor_(std::make_shared<Predictor>(std::move(kind))) {
    if (ctx_.d() != enc_.d())
      throw StructuralError("Pipeline: context has " + std::to_string(ctx_.d()) +
                            " features, encoder expects " + std::to_string(enc_.d()));
    if (var_ && var_->p() != enc_.p())
      throw StructuralError("Pipeline: variance model has " + std::to_string(var_->p()) +
                            " nets, encoder has p = " + std::to_string(enc_.p()));
    z_ctx_ = enc_.encode(ctx_.normalized_rows());
  }

  const ContextSet& context() const noexcept { return ctx_; }
  const EncoderModel& encoder() const noexcept { return enc_; }
  const std::optional<VarianceModel>& variance() const noexcept { return var_; }
  const PredictorKind& kind() const noexcept { return predictor_->kind(); }
  const Predictor& predictor() const noexcept { return *predictor_; }
  const Matrix& context_latents() const noexcept { return z_ctx_; }
  std::size_t d() const noexcept { return enc_.d(); }
  std::size_t p() const noexcept { return enc_.p(); }

 private:
  ContextSet ctx_;
  EncoderModel enc_;
  std::optional<VarianceModel> var_;
  std::shared_ptr<Predictor> predictor_;
  Matrix z_ctx_;
};

/// Per-row reports for a batch of raw feature rows.
inline std::vector<ScoreReport> score_reports(const Pipeline& pipe, const Matrix& xs) {
  if (xs.cols() != pipe.d())
    throw StructuralError("score: expected " + std::to_string(pipe.d()) + " features, got " +
                          std::to_string(xs.cols()));
  if (xs.rows() == 0) return {};
  const Matrix z = pipe.encoder().encode(normalize(xs, pipe.context().stats));
  const std::size_t p = pipe.p();
  const Matrix mu = conditional_means(pipe.predictor(), z, pipe.context_latents());
  Matrix sigma_sq(xs.rows(), p, 1.0);
  if (pipe.variance()) {
    for (std::size_t j = 0; j < p; ++j) {
      const auto lv = predict_log_var(*pipe.variance(), j, drop_column(z, j));
      for (std::size_t i = 0; i < xs.rows(); ++i) sigma_sq(i, j) = std::exp(lv[i]);
    }
  }
  std::vector<ScoreReport> out;
  out.reserve(xs.rows());
  for (std::size_t i = 0; i < xs.rows(); ++i) out.push_back(report_from_components(z.row(i), mu.row(i), sigma_sq.row(i)));
  return out;
}

inline ScoreReport score(const Pipeline& pipe, std::span<const double> x) {
  return score_reports(pipe, Matrix::row_vector(x)).front();
}

/// Scores every row; identical to calling score() row by row.
inline std::vector<double> score_batch(const Pipeline& pipe, const Matrix& xs) {
  std::vector<double> s;
  for (const auto& r : score_reports(pipe, xs)) s.push_back(r.score);
  return s;
}

inline constexpr double kAttributionEps = 1e-12;

/// Splits each latent contribution over the input features in proportion to
/// |W_enc[j][k] · x̃_k|, the absolute linear influence of feature k on z_j.
inline std::vector<double> attribute_features(const Pipeline& pipe, const ScoreReport& report,
                                              std::span<const double> x) {
  if (x.size() != pipe.d()) throw StructuralError("attribute_features: feature count mismatch");
  if (report.per_dim.size() != pipe.p()) throw StructuralError("attribute_features: report width mismatch");
  const Matrix xn = normalize(Matrix::row_vector(x), pipe.context().stats);
  const Matrix z = pipe.encoder().encode(xn);
  for (std::size_t j = 0; j < pipe.p(); ++j) {
    if (z(0, j) != report.per_dim[j].z)
      throw StructuralError("attribute_features: report was not produced from this row");
  }
  const Matrix& w = pipe.encoder().w_enc;
  std::vector<double> attr(pipe.d(), 0.0);
  for (std::size_t j = 0; j < pipe.p(); ++j) {
    double total = 0.0;
    for (std::size_t m = 0; m < pipe.d(); ++m) total += std::abs(w(j, m) * xn(0, m));
    const double share = report.per_dim[j].contribution / std::max(kAttributionEps, total);
    for (std::size_t k = 0; k < pipe.d(); ++k) attr[k] += share * std::abs(w(j, k) * xn(0, k));
  }
  return attr;
}

// ---------------------------------------------------------------------------
// Output formats

inline void write_scores_csv(std::ostream& out, std::span<const double> scores) {
  out << "row_id,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) out << i << ',' << format_double(scores[i]) << '\n';
}

inline nlohmann::json report_to_json(const ScoreReport& r, std::size_t row_id,
                                     std::span<const std::string> feature_names,
                                     std::span<const double> raw, std::span<const double> normalized) {
  nlohmann::json dims = nlohmann::json::array();
  for (std::size_t j = 0; j < r.per_dim.size(); ++j) {
    const auto& d = r.per_dim[j];
    dims.push_back({{"dim", "Z_" + std::to_string(j)},
                    {"latent_value", d.z},
                    {"conditional_mean", d.mu_hat},
                    {"residual", d.residual},
                    {"conditional_variance", d.sigma_sq},
                    {"nll", d.nll_full},
                    {"contribution", d.contribution}});
  }
  nlohmann::json feats = nlohmann::json::array();
  double attr_sum = 0.0, contrib_sum = 0.0;
  for (std::size_t k = 0; k < feature_names.size(); ++k) {
    const double a = k < r.feature_attribution.size() ? r.feature_attribution[k] : 0.0;
    attr_sum += a;
    feats.push_back({{"feature", feature_names[k]},
                     {"raw_value", raw[k]},
                     {"normalized_value", normalized[k]},
                     {"attribution", a}});
  }
  for (const auto& d : r.per_dim) contrib_sum += d.contribution;
  return {{"row_id", row_id},
          {"score", r.score},
          {"latent", dims},
          {"features", feats},
          {"attribution_check",
           {{"sum_attribution", attr_sum},
            {"sum_contribution", contrib_sum},
            {"abs_diff", std::abs(attr_sum - contrib_sum)}}}};
}

// ---------------------------------------------------------------------------
// Artifact directory: context.txt, encoder.json, variance.json, manifest.json

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IngestError("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IngestError("cannot write '" + p.string() + "'");
  out << bytes;
}

/// Writes the pipeline artifacts and a manifest carrying `run_config`
/// (whatever the caller needs to reproduce the run) and file hashes.
inline void save_pipeline(const std::filesystem::path& dir, const Pipeline& pipe,
                          const nlohmann::json& run_config = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  std::ostringstream ctx;
  write_context(ctx, pipe.context());
  const std::string enc = encoder_to_json(pipe.encoder()).dump() + "\n";
  write_file(dir / "context.txt", ctx.str());
  write_file(dir / "encoder.json", enc);
  nlohmann::json hashes = {{"context.txt", fnv1a_hex(ctx.str())}, {"encoder.json", fnv1a_hex(enc)}};
  if (pipe.variance()) {
    const std::string var = variance_to_json(*pipe.variance()).dump() + "\n";
    write_file(dir / "variance.json", var);
    hashes["variance.json"] = fnv1a_hex(var);
  } else {
    std::filesystem::remove(dir / "variance.json");
  }
  const nlohmann::json manifest = {{"format", "depscore-manifest"},
                                   {"version", 1},
                                   {"predictor", kind_to_json(pipe.kind())},
                                   {"uncertainty", pipe.variance().has_value()},
                                   {"d", pipe.d()},
                                   {"p", pipe.p()},
                                   {"config", run_config},
                                   {"hashes", hashes}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Pipeline load_pipeline(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  if (manifest.value("format", "") != "depscore-manifest")
    throw StructuralError("manifest.json: not a depscore manifest");
  const std::string ctx_bytes = read_file(dir / "context.txt");
  const std::string enc_bytes = read_file(dir / "encoder.json");
  const auto& hashes = manifest.at("hashes");
  if (hashes.at("context.txt") != fnv1a_hex(ctx_bytes) || hashes.at("encoder.json") != fnv1a_hex(enc_bytes))
    throw StructuralError("model directory: artifact hash mismatch");
  std::istringstream ctx_in(ctx_bytes);
  std::optional<VarianceModel> var;
  if (manifest.at("uncertainty").get<bool>()) {
    const std::string var_bytes = read_file(dir / "variance.json");
    if (hashes.at("variance.json") != fnv1a_hex(var_bytes))
      throw StructuralError("model directory: artifact hash mismatch");
    var = variance_from_json(nlohmann::json::parse(var_bytes));
  }
  return Pipeline(read_context(ctx_in), encoder_from_json(nlohmann::json::parse(enc_bytes)),
                  std::move(var), kind_from_json(manifest.at("predictor")));
}

}  // namespace depscore
