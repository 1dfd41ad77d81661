#pragma once

// Fuzz generators and brute-force oracles shared by the tests. The oracles
// avoid the library's own code paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "untangle/core.hpp"
#include "untangle/random.hpp"

namespace testing_support {

using untangle::PredictionSet;

inline double entropy_oracle(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) d += p[i] * std::log(p[i] / q[i]);
  }
  return d;
}

/// O(n^2) pairwise count, ties worth 1/2.
inline double auroc_oracle(const std::vector<double>& s, const std::vector<bool>& t) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!t[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (t[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline std::vector<double> row(const PredictionSet& set, std::size_t m) {
  auto r = set.prob_row(m);
  return {r.begin(), r.end()};
}

/// Random set with M in [1, max_m], C in [2, max_c] and logits of random scale,
/// sometimes extreme enough to underflow probabilities.
inline PredictionSet random_set(untangle::Rng& rng, std::size_t max_m = 32, std::size_t max_c = 100) {
  const std::size_t m = 1 + rng.below(max_m);
  const std::size_t c = 2 + rng.below(max_c - 1);
  const double scale = std::exp(rng.uniform(-3.0, 4.0));
  std::vector<double> logits(m * c);
  for (double& v : logits) v = scale * rng.normal();
  return PredictionSet(m, c, std::move(logits));
}

inline std::vector<std::uint32_t> random_votes(untangle::Rng& rng, std::size_t c) {
  std::vector<std::uint32_t> votes(c, 0);
  const auto total = 1 + rng.below(50);
  const auto spread = 1 + rng.below(c);
  for (std::uint64_t v = 0; v < total; ++v) ++votes[rng.below(spread)];
  return votes;
}

}  // namespace testing_support
