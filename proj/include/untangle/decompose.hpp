#pragma once

// Predictive / aleatoric / epistemic decompositions: entropy-based (mutual
// information) and KL-Bregman (with optional bias against a soft label).

#include <cmath>
#include <optional>

#include "untangle/aggregate.hpp"
#include "untangle/core.hpp"

namespace untangle {

/// Digamma for x > 0. Recurrence up to x >= 10, then the asymptotic series
/// through x^-14; absolute error below 1e-14 on [1, inf).
inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw Error(ErrorKind::InvalidInput, "digamma needs a positive finite argument");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli coefficients B_2k / (2k).
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0)))))));
  return result + std::log(x) - 0.5 * inv - series;
}

struct ItDecomposition {
  double predictive = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;
};

struct BregmanDecomposition {
  std::optional<double> predictive;
  std::optional<double> aleatoric_gt;
  double aleatoric_est = 0.0;
  double epistemic = 0.0;
  std::optional<double> bias;
};

inline ItDecomposition it_decompose(const PredictionSet& set) {
  const auto t = detail::it_terms(set);
  return {t.predictive, t.aleatoric, t.epistemic};
}

/// Closed form for a Dirichlet: entropy of the mean, and the expected
/// categorical entropy psi(S+1) - sum_c (beta_c/S) psi(beta_c+1).
inline ItDecomposition it_decompose_dirichlet(const DirichletPrediction& d) {
  const double strength = d.strength();
  const double predictive = entropy(d.mean());
  double aleatoric = digamma(strength + 1.0);
  for (double b : d.beta()) aleatoric -= (b / strength) * digamma(b + 1.0);
  aleatoric = std::max(aleatoric, 0.0);
  return {predictive, aleatoric, std::max(predictive - aleatoric, 0.0)};
}

inline double gt_aleatoric(const SoftLabel& soft) { return entropy(soft.pi_star()); }

/// KL-Bregman decomposition around the dual centroid. Ground-truth fields are
/// filled only when a soft label is supplied.
inline BregmanDecomposition bregman_decompose(const PredictionSet& set,
                                              const std::optional<SoftLabel>& soft = std::nullopt,
                                              double epsilon = kEpsilon) {
  const detail::DualView view(set, epsilon);
  BregmanDecomposition out;
  out.aleatoric_est = detail::mean_member_entropy(set);
  out.epistemic = view.expected_divergence();
  if (soft) {
    if (soft->classes() != set.classes()) throw Error(ErrorKind::ShapeError, "soft label length differs from class count");
    out.predictive = view.expected_cross_entropy(soft->pi_star());
    out.aleatoric_gt = entropy(soft->pi_star());
    out.bias = view.bias(soft->pi_star());
  }
  return out;
}

}  // namespace untangle
