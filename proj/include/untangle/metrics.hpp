#pragma once

// Scoring uncertainty estimates against ground truth.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "untangle/core.hpp"

namespace untangle {

namespace detail {

inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw Error(ErrorKind::ShapeError, std::string(what) + ": input lengths differ");
}

}  // namespace detail

/// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i+1 .. j share their mean rank.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half (Mann-Whitney U / (n_pos n_neg)).
inline double auroc(std::span<const double> scores, const std::vector<bool>& targets) {
  detail::require_same_length(scores.size(), targets.size(), "auroc");
  const auto ranks = average_ranks(scores);
  double positives = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (targets[i]) {
      positives += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) throw Error(ErrorKind::DegenerateTargets, "auroc needs both positive and negative targets");
  const double u = rank_sum - positives * (positives + 1.0) / 2.0;
  return u / (positives * negatives);
}

struct CurvePoints {
  std::vector<double> coverage;
  std::vector<double> accuracy;
  double area = 0.0;
};

namespace detail {

/// Trapezoid over coverage k/n, k = 1..n, with the first value held flat down
/// to coverage 0 so that a constant curve integrates to its value.
inline double curve_area(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  const double step = 1.0 / static_cast<double>(n);
  double area = values[0] * step;
  for (std::size_t k = 1; k < n; ++k) area += 0.5 * (values[k - 1] + values[k]) * step;
  return area;
}

inline CurvePoints make_curve(std::vector<double> accuracy) {
  CurvePoints curve;
  const std::size_t n = accuracy.size();
  curve.coverage.resize(n);
  for (std::size_t k = 0; k < n; ++k) curve.coverage[k] = static_cast<double>(k + 1) / static_cast<double>(n);
  curve.area = curve_area(accuracy);
  curve.accuracy = std::move(accuracy);
  return curve;
}

/// Accuracy after keeping the k most certain samples when the curve is built
/// to maximize accuracy (correct samples first).
inline std::vector<double> oracle_prefix_accuracy(std::size_t n, std::size_t n_correct) {
  std::vector<double> acc(n);
  for (std::size_t k = 1; k <= n; ++k) {
    acc[k - 1] = static_cast<double>(std::min(k, n_correct)) / static_cast<double>(k);
  }
  return acc;
}

}  // namespace detail

/// Accuracy-coverage curve: samples ordered by ascending uncertainty. Within a
/// group of tied uncertainties the prefix accuracy is the group's expected
/// value under a uniformly random order, so ties never depend on input order.
inline CurvePoints accuracy_coverage(std::span<const double> uncertainty, const std::vector<bool>& correct) {
  detail::require_same_length(uncertainty.size(), correct.size(), "accuracy_coverage");
  const std::size_t n = uncertainty.size();
  if (n == 0) throw Error(ErrorKind::EmptyInput, "accuracy_coverage of an empty dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return uncertainty[a] < uncertainty[b]; });
  std::vector<double> acc(n);
  std::size_t before = 0;
  double correct_before = 0.0;
  while (before < n) {
    std::size_t end = before + 1;
    while (end < n && uncertainty[order[end]] == uncertainty[order[before]]) ++end;
    double group_correct = 0.0;
    for (std::size_t k = before; k < end; ++k) group_correct += correct[order[k]] ? 1.0 : 0.0;
    const double group_size = static_cast<double>(end - before);
    for (std::size_t k = before; k < end; ++k) {
      const double taken = static_cast<double>(k + 1 - before);
      acc[k] = (correct_before + taken * group_correct / group_size) / static_cast<double>(k + 1);
    }
    correct_before += group_correct;
    before = end;
  }
  return detail::make_curve(std::move(acc));
}

inline double accuracy(const std::vector<bool>& correct) {
  if (correct.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of an empty dataset");
  return static_cast<double>(std::count(correct.begin(), correct.end(), true)) / static_cast<double>(correct.size());
}

/// AUAC of the correctness-sorted ordering of a dataset of size n.
inline double oracle_auac(std::size_t n, double dataset_accuracy) {
  const auto n_correct = static_cast<std::size_t>(std::llround(dataset_accuracy * static_cast<double>(n)));
  return detail::curve_area(detail::oracle_prefix_accuracy(n, n_correct));
}

/// (AUAC - AUAC_random) / (AUAC_oracle - AUAC_random) with AUAC_random the
/// dataset accuracy. Missing when accuracy is 0 or 1.
inline std::optional<double> raulc(const CurvePoints& curve, double dataset_accuracy) {
  const double oracle = oracle_auac(curve.accuracy.size(), dataset_accuracy);
  const double denom = oracle - dataset_accuracy;
  if (dataset_accuracy <= 0.0 || dataset_accuracy >= 1.0 || denom <= 0.0) return std::nullopt;
  return (curve.area - dataset_accuracy) / denom;
}

/// Excess area under the risk-coverage curve over the oracle ordering.
inline double e_aurc(std::span<const double> uncertainty, const std::vector<bool>& correct) {
  const auto curve = accuracy_coverage(uncertainty, correct);
  std::vector<double> risk(curve.accuracy.size());
  for (std::size_t k = 0; k < risk.size(); ++k) risk[k] = 1.0 - curve.accuracy[k];
  const auto n_correct = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
  auto oracle_risk = detail::oracle_prefix_accuracy(correct.size(), n_correct);
  for (double& r : oracle_risk) r = 1.0 - r;
  return std::max(detail::curve_area(risk) - detail::curve_area(oracle_risk), 0.0);
}

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

/// Equal-width bins over [0, 1]; confidence 1 falls in the last bin.
inline std::vector<CalibrationBin> calibration_bins(std::span<const double> confidence,
                                                    const std::vector<bool>& correct, std::size_t bins) {
  detail::require_same_length(confidence.size(), correct.size(), "ece");
  if (bins < 1) throw Error(ErrorKind::InvalidInput, "ece needs at least one bin");
  std::vector<CalibrationBin> out(bins);
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> correct_sum(bins, 0.0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorKind::InvalidInput, "confidence outside [0,1]");
    const auto b = std::min(static_cast<std::size_t>(c * static_cast<double>(bins)), bins - 1);
    out[b].count += 1;
    conf_sum[b] += c;
    correct_sum[b] += correct[i] ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = static_cast<double>(b) / static_cast<double>(bins);
    out[b].upper = static_cast<double>(b + 1) / static_cast<double>(bins);
    if (out[b].count > 0) {
      out[b].mean_confidence = conf_sum[b] / static_cast<double>(out[b].count);
      out[b].accuracy = correct_sum[b] / static_cast<double>(out[b].count);
    }
  }
  return out;
}

inline double ece(std::span<const double> confidence, const std::vector<bool>& correct, std::size_t bins = 15) {
  const auto table = calibration_bins(confidence, correct, bins);
  if (confidence.empty()) return 0.0;
  double total = 0.0;
  for (const auto& bin : table) {
    if (bin.count == 0) continue;
    total += static_cast<double>(bin.count) * std::abs(bin.mean_confidence - bin.accuracy);
  }
  return total / static_cast<double>(confidence.size());
}

struct ScoringRules {
  double brier = 0.0;
  double log_prob = 0.0;
};

/// Binary correctness scoring of a confidence: Brier score and mean log
/// probability of the observed outcome (logs clamped at epsilon).
inline ScoringRules scoring_rules(std::span<const double> confidence, const std::vector<bool>& correct,
                                  double epsilon = kEpsilon) {
  detail::require_same_length(confidence.size(), correct.size(), "scoring_rules");
  if (confidence.empty()) throw Error(ErrorKind::EmptyInput, "scoring_rules of an empty dataset");
  ScoringRules out;
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorKind::InvalidInput, "confidence outside [0,1]");
    const double outcome = correct[i] ? 1.0 : 0.0;
    out.brier += (c - outcome) * (c - outcome);
    const double p = correct[i] ? c : 1.0 - c;
    out.log_prob += std::log(std::max(p, epsilon));
  }
  const auto n = static_cast<double>(confidence.size());
  out.brier /= n;
  out.log_prob /= n;
  return out;
}

/// Pearson correlation; missing for constant input.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  detail::require_same_length(x.size(), y.size(), "pearson");
  if (x.size() < 2) throw Error(ErrorKind::InvalidInput, "correlation needs at least two points");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Pearson correlation of average ranks.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  detail::require_same_length(x.size(), y.size(), "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

/// (metric - rnd) / (1 - rnd).
inline double normalize_metric(double value, double random_baseline) {
  if (!(random_baseline < 1.0)) throw Error(ErrorKind::InvalidBaseline, "random baseline must be below 1");
  return (value - random_baseline) / (1.0 - random_baseline);
}

}  // namespace untangle
