#pragma once

// Dataset-level analyses: OOD mixtures, ambiguity targets, disentanglement
// correlations, severity sweeps and metric-correlation matrices.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "untangle/aggregate.hpp"
#include "untangle/core.hpp"
#include "untangle/metrics.hpp"
#include "untangle/random.hpp"

namespace untangle {

struct MixtureDataset {
  std::vector<SampleRecord> samples;
  /// true for samples drawn from the OOD side.
  std::vector<bool> targets;
};

namespace detail {

/// k sorted indices out of [0, n) by a seeded partial Fisher-Yates shuffle.
inline std::vector<std::size_t> choose_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Balanced ID/OOD mixture. The larger side is subsampled with the seed; both
/// sides keep their original relative order, ID first.
inline MixtureDataset build_ood_mixture(std::span<const SampleRecord> id_set, std::span<const SampleRecord> ood_set,
                                        std::uint64_t seed) {
  if (id_set.empty() || ood_set.empty()) throw Error(ErrorKind::EmptyInput, "OOD mixture needs nonempty ID and OOD sets");
  if (dataset_classes(id_set) != dataset_classes(ood_set)) throw Error(ErrorKind::ShapeError, "ID and OOD sets differ in class count");
  const std::size_t k = std::min(id_set.size(), ood_set.size());
  Rng rng(seed, Stream::Mixture);
  auto pick = [&](std::span<const SampleRecord> side) {
    if (side.size() == k) {
      std::vector<std::size_t> all(k);
      std::iota(all.begin(), all.end(), std::size_t{0});
      return all;
    }
    return detail::choose_subset(side.size(), k, rng);
  };
  MixtureDataset out;
  out.samples.reserve(2 * k);
  for (std::size_t i : pick(id_set)) {
    out.samples.push_back(id_set[i]);
    out.targets.push_back(false);
  }
  for (std::size_t i : pick(ood_set)) {
    out.samples.push_back(ood_set[i]);
    out.targets.push_back(true);
  }
  return out;
}

/// true where annotators did not agree unanimously.
inline std::vector<bool> ambiguity_targets(std::span<const SampleRecord> samples) {
  std::vector<bool> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.soft_label) throw Error(ErrorKind::MissingSoftLabel, "ambiguity targets need soft labels; sample " + s.id + " has none");
    out.push_back(s.soft_label->ambiguous());
  }
  return out;
}

struct DisentanglementReport {
  std::optional<double> corr_ua_ue;
  std::optional<double> corr_ua_gtA;
  std::optional<double> corr_ue_proxyE;
  std::optional<double> corr_ua_proxyE;
  std::optional<double> corr_ue_gtA;
};

/// Spearman correlations between an aleatoric estimate u_a, an epistemic
/// estimate u_e, the ground-truth aleatoric values and the 0/1 OOD proxy.
inline DisentanglementReport disentanglement(std::span<const double> u_a, std::span<const double> u_e,
                                             std::span<const double> gt_a, const std::vector<bool>& proxy_e) {
  const std::size_t n = u_a.size();
  if (u_e.size() != n || gt_a.size() != n || proxy_e.size() != n) {
    throw Error(ErrorKind::ShapeError, "disentanglement inputs have different lengths");
  }
  std::vector<double> proxy(n);
  for (std::size_t i = 0; i < n; ++i) proxy[i] = proxy_e[i] ? 1.0 : 0.0;
  DisentanglementReport r;
  r.corr_ua_ue = spearman(u_a, u_e);
  r.corr_ua_gtA = spearman(u_a, gt_a);
  r.corr_ue_proxyE = spearman(u_e, proxy);
  r.corr_ua_proxyE = spearman(u_a, proxy);
  r.corr_ue_gtA = spearman(u_e, gt_a);
  return r;
}

/// Threshold policy for a pass/fail summary. The defaults are a reporting
/// convention, not derived values.
struct DisentanglementThresholds {
  double low = 0.3;
  double high = 0.7;
};

struct DisentanglementVerdict {
  bool decorrelated = false;
  bool well_performing = false;
  bool disentangled = false;
};

inline DisentanglementVerdict judge(const DisentanglementReport& r, const DisentanglementThresholds& t = {}) {
  auto low = [&](const std::optional<double>& v) { return v && std::abs(*v) <= t.low; };
  auto high = [&](const std::optional<double>& v) { return v && *v >= t.high; };
  DisentanglementVerdict v;
  v.decorrelated = low(r.corr_ua_proxyE) && low(r.corr_ue_gtA);
  v.well_performing = high(r.corr_ua_gtA) && high(r.corr_ue_proxyE);
  v.disentangled = v.decorrelated && v.well_performing;
  return v;
}

struct SweepInput {
  std::vector<int> severity;
  std::vector<double> uncertainty;
  std::vector<bool> correct;
  /// Optional; ECE is missing when empty.
  std::vector<double> confidence;
  std::size_t classes = 2;
};

struct SeverityRow {
  int severity = 0;
  std::size_t count = 0;
  bool missing = true;
  std::optional<double> accuracy;
  std::optional<double> auroc;
  std::optional<double> auac;
  std::optional<double> ece;
  std::optional<double> normalized_accuracy;
  std::optional<double> normalized_auroc;
  std::optional<double> normalized_auac;
};

/// Per-severity accuracy, correctness AUROC, AUAC and ECE plus normalized
/// columns against a random predictor (0.5 for AUROC, 1/C otherwise). When
/// `levels` is empty the severities present in the data are reported.
inline std::vector<SeverityRow> severity_sweep(const SweepInput& in, std::vector<int> levels = {},
                                               std::size_t bins = 15) {
  const std::size_t n = in.severity.size();
  if (in.uncertainty.size() != n || in.correct.size() != n || (!in.confidence.empty() && in.confidence.size() != n)) {
    throw Error(ErrorKind::ShapeError, "severity sweep inputs have different lengths");
  }
  if (levels.empty()) {
    std::set<int> present(in.severity.begin(), in.severity.end());
    levels.assign(present.begin(), present.end());
  }
  const double chance = 1.0 / static_cast<double>(in.classes);
  std::vector<SeverityRow> rows;
  for (int level : levels) {
    if (level < 0 || level > 5) throw Error(ErrorKind::InvalidInput, "severity outside [0,5]");
    SeverityRow row;
    row.severity = level;
    std::vector<double> u;
    std::vector<double> conf;
    std::vector<bool> ok;
    std::vector<bool> wrong;
    for (std::size_t i = 0; i < n; ++i) {
      if (in.severity[i] != level) continue;
      u.push_back(in.uncertainty[i]);
      ok.push_back(in.correct[i]);
      wrong.push_back(!in.correct[i]);
      if (!in.confidence.empty()) conf.push_back(in.confidence[i]);
    }
    row.count = u.size();
    if (u.empty()) {
      rows.push_back(row);
      continue;
    }
    row.missing = false;
    row.accuracy = accuracy(ok);
    row.normalized_accuracy = normalize_metric(*row.accuracy, chance);
    const bool mixed = *row.accuracy > 0.0 && *row.accuracy < 1.0;
    if (mixed) {
      row.auroc = auroc(u, wrong);
      row.normalized_auroc = normalize_metric(*row.auroc, 0.5);
    }
    row.auac = accuracy_coverage(u, ok).area;
    row.normalized_auac = normalize_metric(*row.auac, chance);
    if (!conf.empty()) row.ece = ece(conf, ok, bins);
    rows.push_back(row);
  }
  return rows;
}

/// Metric columns fed only by the [0,1]-bounded aggregators.
inline bool is_calibration_metric(const std::string& metric) {
  return metric == "ece" || metric == "brier" || metric == "log_prob";
}

/// Rows keyed by (method, aggregator), columns by metric name.
class ResultsTable {
 public:
  using RowKey = std::pair<std::string, std::string>;

  void set(const std::string& method, AggregatorKind kind, const std::string& metric, std::optional<double> value) {
    if (is_calibration_metric(metric) && !is_unit_bounded(kind)) {
      throw Error(ErrorKind::InvalidInput, "metric " + metric + " only accepts [0,1]-bounded aggregators, not " +
                                               std::string(to_string(kind)));
    }
    set_raw(method, std::string(to_string(kind)), metric, value);
  }

  void set_raw(const std::string& method, const std::string& aggregator, const std::string& metric,
               std::optional<double> value) {
    const RowKey key{method, aggregator};
    auto it = std::find(rows_.begin(), rows_.end(), key);
    std::size_t r = static_cast<std::size_t>(it - rows_.begin());
    if (it == rows_.end()) {
      rows_.push_back(key);
      cells_.emplace_back(columns_.size());
    }
    auto cit = std::find(columns_.begin(), columns_.end(), metric);
    std::size_t c = static_cast<std::size_t>(cit - columns_.begin());
    if (cit == columns_.end()) {
      columns_.push_back(metric);
      for (auto& row : cells_) row.emplace_back();
    }
    cells_[r][c] = value;
  }

  const std::vector<RowKey>& rows() const noexcept { return rows_; }
  const std::vector<std::string>& columns() const noexcept { return columns_; }
  std::optional<double> cell(std::size_t row, std::size_t col) const { return cells_[row][col]; }

 private:
  std::vector<RowKey> rows_;
  std::vector<std::string> columns_;
  std::vector<std::vector<std::optional<double>>> cells_;
};

enum class CorrelationMode { Pearson, Spearman };

struct CorrelationMatrix {
  std::vector<std::string> names;
  /// Row-major, names.size() squared.
  std::vector<std::optional<double>> cells;

  std::optional<double> at(std::size_t i, std::size_t j) const { return cells[i * names.size() + j]; }
};

/// Correlation of every metric pair over table rows. Each pair uses the rows
/// where both cells are present; fewer than three such rows, or a constant
/// column, leaves the cell missing. The diagonal is exactly 1.
inline CorrelationMatrix metric_correlation_matrix(const ResultsTable& table, CorrelationMode mode) {
  if (table.rows().size() < 3) throw Error(ErrorKind::InvalidInput, "correlation matrix needs at least three rows");
  const std::size_t k = table.columns().size();
  CorrelationMatrix out;
  out.names = table.columns();
  out.cells.assign(k * k, std::nullopt);
  for (std::size_t i = 0; i < k; ++i) {
    out.cells[i * k + i] = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      std::vector<double> x;
      std::vector<double> y;
      for (std::size_t r = 0; r < table.rows().size(); ++r) {
        const auto a = table.cell(r, i);
        const auto b = table.cell(r, j);
        if (a && b) {
          x.push_back(*a);
          y.push_back(*b);
        }
      }
      std::optional<double> v;
      if (x.size() >= 3) v = mode == CorrelationMode::Pearson ? pearson(x, y) : spearman(x, y);
      out.cells[i * k + j] = v;
      out.cells[j * k + i] = v;
    }
  }
  return out;
}

}  // namespace untangle
