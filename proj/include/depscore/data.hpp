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

// Tabular datasets, CSV ingestion, normalization statistics and the
// semi-supervised train/test split.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "depscore/errors.hpp"
#include "depscore/numkit/matrix.hpp"
#include "depscore/numkit/random.hpp"

namespace depscore {

enum class Label : std::uint8_t { normal = 0, anomaly = 1 };

struct LabeledDataset {
  Matrix features;  ///< N × d
  std::vector<Label> labels;
  std::vector<std::string> feature_names;
  std::string name;

  std::size_t n() const noexcept { return features.rows(); }
  std::size_t d() const noexcept { return features.cols(); }
  std::size_t count(Label l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }

  void validate() const {
    if (labels.size() != features.rows())
      throw StructuralError("LabeledDataset: labels length != rows");
    if (feature_names.size() != features.cols())
      throw StructuralError("LabeledDataset: feature_names length != cols");
    std::set<std::string> uniq(feature_names.begin(), feature_names.end());
    if (uniq.size() != feature_names.size())
      throw StructuralError("LabeledDataset: duplicate feature names");
    if (count(Label::normal) == 0) throw ConfigError("LabeledDataset: no normal rows");
  }
};

inline constexpr double kStdFloor = 1e-8;

/// Column means and population standard deviations (floored at kStdFloor).
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t d() const noexcept { return mean.size(); }
};

inline NormStats compute_norm_stats(const Matrix& x, double std_floor = kStdFloor) {
  if (x.rows() == 0) throw StructuralError("compute_norm_stats: empty matrix");
  const std::size_t d = x.cols();
  NormStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  const double n = static_cast<double>(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += x(i, k);
  for (double& m : s.mean) m /= n;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double c = x(i, k) - s.mean[k];
      s.std[k] += c * c;
    }
  for (double& v : s.std) v = std::max(std_floor, std::sqrt(v / n));
  return s;
}

inline Matrix normalize(const Matrix& x, const NormStats& stats) {
  if (x.cols() != stats.d()) {
    throw StructuralError("normalize: matrix has " + std::to_string(x.cols()) +
                          " columns, stats have " + std::to_string(stats.d()));
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) out(i, k) = (x(i, k) - stats.mean[k]) / stats.std[k];
  if (!out.all_finite()) throw NumericError("normalize: non-finite output");
  return out;
}

inline Matrix denormalize(const Matrix& x, const NormStats& stats) {
  if (x.cols() != stats.d()) throw StructuralError("denormalize: dimension mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) out(i, k) = x(i, k) * stats.std[k] + stats.mean[k];
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      // Strip a UTF-8 byte order mark.
      if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (trim(line).empty()) continue;
      for (auto& h : split_csv_line(line)) t.header.emplace_back(trim(h));
      have_header = true;
      continue;
    }
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw IngestError(path + ": line " + std::to_string(lineno) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) throw IngestError(path + ": empty file");
  return t;
}

inline Matrix parse_numeric_columns(const CsvTable& t, const std::vector<std::size_t>& cols,
                                    const std::string& path) {
  Matrix x(t.rows.size(), cols.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto v = parse_double(t.rows[i][cols[k]]);
      if (!v) {
        throw IngestError(path + ": row " + std::to_string(i + 1) + ", column '" +
                          t.header[cols[k]] + "': cannot parse '" + t.rows[i][cols[k]] +
                          "' as a finite number");
      }
      x(i, k) = *v;
    }
  }
  return x;
}

}  // namespace detail

/// Reads a labelled CSV. Every column except `label_column` must be numeric;
/// rows whose label equals `anomaly_value` are anomalies.
inline LabeledDataset load_csv(const std::string& path, const std::string& label_column,
                               const std::string& anomaly_value) {
  const auto t = detail::read_csv_table(path);
  const auto it = std::find(t.header.begin(), t.header.end(), label_column);
  if (it == t.header.end()) throw IngestError(path + ": missing label column '" + label_column + "'");
  if (t.rows.empty()) throw IngestError(path + ": no data rows");
  const std::size_t label_idx = static_cast<std::size_t>(it - t.header.begin());

  std::vector<std::size_t> cols;
  LabeledDataset ds;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == label_idx) continue;
    cols.push_back(c);
    ds.feature_names.push_back(t.header[c]);
  }
  ds.features = detail::parse_numeric_columns(t, cols, path);
  ds.labels.reserve(t.rows.size());
  for (const auto& row : t.rows)
    ds.labels.push_back(detail::trim(row[label_idx]) == anomaly_value ? Label::anomaly : Label::normal);
  const auto slash = path.find_last_of('/');
  ds.name = path.substr(slash == std::string::npos ? 0 : slash + 1);
  if (const auto dot = ds.name.rfind('.'); dot != std::string::npos) ds.name.erase(dot);
  ds.validate();
  return ds;
}

/// Unlabelled feature table for scoring. Zero data rows is valid; `drop_column`
/// (if present in the header) is ignored.
struct FeatureTable {
  Matrix features;
  std::vector<std::string> feature_names;
};

inline FeatureTable load_feature_csv(const std::string& path, const std::string& drop_column = {}) {
  const auto t = detail::read_csv_table(path);
  std::vector<std::size_t> cols;
  FeatureTable out;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (!drop_column.empty() && t.header[c] == drop_column) continue;
    cols.push_back(c);
    out.feature_names.push_back(t.header[c]);
  }
  out.features = detail::parse_numeric_columns(t, cols, path);
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Writes the dataset in the same format load_csv reads (label column last, 1 = anomaly).
inline void write_csv(const std::string& path, const LabeledDataset& ds,
                      const std::string& label_column = "label") {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write '" + path + "'");
  for (const auto& n : ds.feature_names) out << n << ',';
  out << label_column << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t k = 0; k < ds.d(); ++k) out << format_double(ds.features(i, k)) << ',';
    out << (ds.labels[i] == Label::anomaly ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Split

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

struct Split {
  Matrix train;  ///< normal rows only
  Matrix test;
  std::vector<Label> test_labels;
  std::vector<std::size_t> train_indices;  ///< row ids in the source dataset
  std::vector<std::size_t> test_indices;
};

/// Semi-supervised split: ⌊fraction · N_normal⌋ shuffled normal rows train;
/// the remaining normals plus every anomaly form the test set (source order).
inline Split split(const LabeledDataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw ConfigError("split: train_fraction must be in (0, 1)");
  std::vector<std::size_t> normals;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (ds.labels[i] == Label::normal) normals.push_back(i);
  const auto n_train = static_cast<std::size_t>(
      std::floor(spec.train_fraction * static_cast<double>(normals.size())));
  if (n_train == 0) {
    throw ConfigError("split: " + std::to_string(normals.size()) +
                      " normal rows are too few to populate the training set");
  }
  Rng rng = make_rng(spec.seed, 0x5b1d);
  shuffle_indices(normals, rng);

  Split s;
  s.train_indices.assign(normals.begin(), normals.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(s.train_indices.begin(), s.train_indices.end());
  std::vector<bool> in_train(ds.n(), false);
  for (auto i : s.train_indices) in_train[i] = true;
  for (std::size_t i = 0; i < ds.n(); ++i)
    if (!in_train[i]) s.test_indices.push_back(i);

  s.train = select_rows(ds.features, s.train_indices);
  s.test = select_rows(ds.features, s.test_indices);
  for (auto i : s.test_indices) s.test_labels.push_back(ds.labels[i]);
  return s;
}

}  // namespace depscore
