#pragma once

// Central predictions and the fourteen scalar uncertainty aggregators.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "untangle/core.hpp"

namespace untangle {

enum class AggregatorKind {
  PU_IT,
  AU_IT,
  EU_IT,
  PU_B,
  AU_B,
  EU_B,
  BIAS_B,
  ENTROPY_DUAL,
  ONE_MINUS_EXP_MAX,
  ONE_MINUS_MAX_BMA,
  ONE_MINUS_MAX_DUAL,
  DEMPSTER_SHAFER,
  EXP_VAR_LOGIT,
  EXP_VAR_PROB,
};

inline constexpr std::array<AggregatorKind, 14> kAllAggregators = {
    AggregatorKind::PU_IT,           AggregatorKind::AU_IT,
    AggregatorKind::EU_IT,           AggregatorKind::PU_B,
    AggregatorKind::AU_B,            AggregatorKind::EU_B,
    AggregatorKind::BIAS_B,          AggregatorKind::ENTROPY_DUAL,
    AggregatorKind::ONE_MINUS_EXP_MAX, AggregatorKind::ONE_MINUS_MAX_BMA,
    AggregatorKind::ONE_MINUS_MAX_DUAL, AggregatorKind::DEMPSTER_SHAFER,
    AggregatorKind::EXP_VAR_LOGIT,   AggregatorKind::EXP_VAR_PROB,
};

inline std::string_view to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::PU_IT: return "PU_IT";
    case AggregatorKind::AU_IT: return "AU_IT";
    case AggregatorKind::EU_IT: return "EU_IT";
    case AggregatorKind::PU_B: return "PU_B";
    case AggregatorKind::AU_B: return "AU_B";
    case AggregatorKind::EU_B: return "EU_B";
    case AggregatorKind::BIAS_B: return "BIAS_B";
    case AggregatorKind::ENTROPY_DUAL: return "ENTROPY_DUAL";
    case AggregatorKind::ONE_MINUS_EXP_MAX: return "ONE_MINUS_EXP_MAX";
    case AggregatorKind::ONE_MINUS_MAX_BMA: return "ONE_MINUS_MAX_BMA";
    case AggregatorKind::ONE_MINUS_MAX_DUAL: return "ONE_MINUS_MAX_DUAL";
    case AggregatorKind::DEMPSTER_SHAFER: return "DEMPSTER_SHAFER";
    case AggregatorKind::EXP_VAR_LOGIT: return "EXP_VAR_LOGIT";
    case AggregatorKind::EXP_VAR_PROB: return "EXP_VAR_PROB";
  }
  throw Error(ErrorKind::UnknownKind, "unknown aggregator enumerator");
}

inline AggregatorKind parse_aggregator(std::string_view name) {
  for (AggregatorKind k : kAllAggregators) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorKind::UnknownKind, "unknown aggregator '" + std::string(name) + "'");
}

/// PU_B, AU_B and BIAS_B compare against the soft label.
inline constexpr bool requires_soft_label(AggregatorKind kind) {
  return kind == AggregatorKind::PU_B || kind == AggregatorKind::AU_B || kind == AggregatorKind::BIAS_B;
}

/// The three maximum-probability aggregators, the only ones bounded to [0, 1].
inline constexpr bool is_unit_bounded(AggregatorKind kind) {
  return kind == AggregatorKind::ONE_MINUS_EXP_MAX || kind == AggregatorKind::ONE_MINUS_MAX_BMA ||
         kind == AggregatorKind::ONE_MINUS_MAX_DUAL;
}

inline std::vector<AggregatorKind> non_gt_aggregators() {
  std::vector<AggregatorKind> out;
  for (AggregatorKind k : kAllAggregators) {
    if (!requires_soft_label(k)) out.push_back(k);
  }
  return out;
}

namespace detail {

inline std::vector<double> bma_values(const PredictionSet& set) {
  const std::size_t c_count = set.classes();
  std::vector<double> mean(c_count, 0.0);
  for (std::size_t m = 0; m < set.members(); ++m) {
    const auto row = set.prob_row(m);
    for (std::size_t c = 0; c < c_count; ++c) mean[c] += row[c];
  }
  for (double& v : mean) v /= static_cast<double>(set.members());
  return mean;
}

inline double mean_member_entropy(const PredictionSet& set) {
  double total = 0.0;
  for (std::size_t m = 0; m < set.members(); ++m) total += entropy(set.prob_row(m));
  return total / static_cast<double>(set.members());
}

struct ItTerms {
  double predictive;
  double aleatoric;
  double epistemic;
};

/// Single source of truth for the entropy decomposition of a sample set.
inline ItTerms it_terms(const PredictionSet& set) {
  const double predictive = entropy(bma_values(set));
  const double aleatoric = mean_member_entropy(set);
  return {predictive, aleatoric, std::max(predictive - aleatoric, 0.0)};
}

/// Log-space quantities behind the dual centroid. Member rows are clamped once
/// and every Bregman term reads the same logarithms.
struct DualView {
  std::size_t members = 0;
  std::size_t classes = 0;
  std::vector<double> log_rows;   // M x C, ln of clamped member probabilities
  std::vector<double> mean_log;   // C, member mean of log_rows
  double log_normalizer = 0.0;    // ln sum_c exp(mean_log_c), always <= 0 up to rounding
  std::vector<double> log_dual;   // C, mean_log - log_normalizer
  std::vector<double> dual;       // C, exp(log_dual)

  DualView(const PredictionSet& set, double epsilon)
      : members(set.members()), classes(set.classes()), log_rows(members * classes),
        mean_log(classes, 0.0), log_dual(classes), dual(classes) {
    std::vector<double> clamped(classes);
    for (std::size_t m = 0; m < members; ++m) {
      clamp_simplex_into(set.prob_row(m), clamped, epsilon);
      for (std::size_t c = 0; c < classes; ++c) {
        const double lv = std::log(clamped[c]);
        log_rows[m * classes + c] = lv;
        mean_log[c] += lv;
      }
    }
    for (double& v : mean_log) v /= static_cast<double>(members);
    log_normalizer = log_sum_exp(mean_log);
    for (std::size_t c = 0; c < classes; ++c) {
      log_dual[c] = mean_log[c] - log_normalizer;
      dual[c] = std::exp(log_dual[c]);
    }
  }

  std::span<const double> log_row(std::size_t m) const {
    return std::span<const double>(log_rows).subspan(m * classes, classes);
  }

  /// mean_m KL(dual || member m).
  double expected_divergence() const {
    double total = 0.0;
    for (std::size_t m = 0; m < members; ++m) {
      const auto lr = log_row(m);
      double kl = 0.0;
      for (std::size_t c = 0; c < classes; ++c) kl += dual[c] * (log_dual[c] - lr[c]);
      total += kl;
    }
    return std::max(total / static_cast<double>(members), 0.0);
  }

  /// mean_m CE(target, member m).
  double expected_cross_entropy(std::span<const double> target) const {
    double total = 0.0;
    for (std::size_t m = 0; m < members; ++m) {
      const auto lr = log_row(m);
      double ce = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (target[c] > 0.0) ce -= target[c] * lr[c];
      }
      total += ce;
    }
    return total / static_cast<double>(members);
  }

  /// KL(target || dual).
  double bias(std::span<const double> target) const {
    double kl = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (target[c] > 0.0) kl += target[c] * (std::log(target[c]) - log_dual[c]);
    }
    return std::max(kl, 0.0);
  }
};

inline double mean_class_variance(std::span<const double> values, std::size_t members, std::size_t classes) {
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    double mean = 0.0;
    for (std::size_t m = 0; m < members; ++m) mean += values[m * classes + c];
    mean /= static_cast<double>(members);
    double var = 0.0;
    for (std::size_t m = 0; m < members; ++m) {
      const double d = values[m * classes + c] - mean;
      var += d * d;
    }
    total += var / static_cast<double>(members);
  }
  return total / static_cast<double>(classes);
}

/// C / S with beta = exp(logits) + 1, evaluated as exp(ln C - ln S).
inline double dempster_shafer_from_logits(std::span<const double> logits) {
  std::vector<double> terms(logits.begin(), logits.end());
  const double log_c = std::log(static_cast<double>(logits.size()));
  terms.push_back(log_c);
  return std::exp(log_c - log_sum_exp(terms));
}

inline void require_soft(const std::optional<SoftLabel>& soft, std::size_t classes, AggregatorKind kind) {
  if (!soft) throw Error(ErrorKind::MissingSoftLabel, std::string(to_string(kind)) + " requires a soft label");
  if (soft->classes() != classes) throw Error(ErrorKind::ShapeError, "soft label length differs from class count");
}

}  // namespace detail

/// Bayesian model average: arithmetic mean of the member probability rows.
inline ProbVector bma(const PredictionSet& set) { return ProbVector(detail::bma_values(set)); }

/// Normalized exponential of the member mean log-probabilities.
inline ProbVector dual_centroid(const PredictionSet& set, double epsilon = kEpsilon) {
  return ProbVector(detail::DualView(set, epsilon).dual);
}

inline double aggregate(const PredictionSet& set, AggregatorKind kind,
                        const std::optional<SoftLabel>& soft = std::nullopt, double epsilon = kEpsilon) {
  using K = AggregatorKind;
  switch (kind) {
    case K::PU_IT: return detail::it_terms(set).predictive;
    case K::AU_IT: return detail::it_terms(set).aleatoric;
    case K::EU_IT: return detail::it_terms(set).epistemic;
    case K::PU_B:
      detail::require_soft(soft, set.classes(), kind);
      return detail::DualView(set, epsilon).expected_cross_entropy(soft->pi_star());
    case K::AU_B:
      detail::require_soft(soft, set.classes(), kind);
      return entropy(soft->pi_star());
    case K::EU_B: return detail::DualView(set, epsilon).expected_divergence();
    case K::BIAS_B:
      detail::require_soft(soft, set.classes(), kind);
      return detail::DualView(set, epsilon).bias(soft->pi_star());
    case K::ENTROPY_DUAL: return entropy(detail::DualView(set, epsilon).dual);
    case K::ONE_MINUS_EXP_MAX: {
      double total = 0.0;
      for (std::size_t m = 0; m < set.members(); ++m) {
        const auto row = set.prob_row(m);
        total += *std::max_element(row.begin(), row.end());
      }
      return std::clamp(1.0 - total / static_cast<double>(set.members()), 0.0, 1.0);
    }
    case K::ONE_MINUS_MAX_BMA: {
      const auto mean = detail::bma_values(set);
      return std::clamp(1.0 - *std::max_element(mean.begin(), mean.end()), 0.0, 1.0);
    }
    case K::ONE_MINUS_MAX_DUAL: {
      const auto dual = detail::DualView(set, epsilon).dual;
      return std::clamp(1.0 - *std::max_element(dual.begin(), dual.end()), 0.0, 1.0);
    }
    case K::DEMPSTER_SHAFER: {
      std::vector<double> mean_logit(set.classes(), 0.0);
      for (std::size_t m = 0; m < set.members(); ++m) {
        const auto row = set.logit_row(m);
        for (std::size_t c = 0; c < set.classes(); ++c) mean_logit[c] += row[c];
      }
      for (double& v : mean_logit) v /= static_cast<double>(set.members());
      return detail::dempster_shafer_from_logits(mean_logit);
    }
    case K::EXP_VAR_LOGIT: return detail::mean_class_variance(set.logits(), set.members(), set.classes());
    case K::EXP_VAR_PROB: return detail::mean_class_variance(set.probs(), set.members(), set.classes());
  }
  throw Error(ErrorKind::UnknownKind, "unknown aggregator enumerator");
}

/// C / S on the Dirichlet strength.
inline double dempster_shafer(const DirichletPrediction& d) {
  return static_cast<double>(d.classes()) / d.strength();
}

}  // namespace untangle
