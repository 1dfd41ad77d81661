#pragma once

// Materializing second-order distributions as finite sample sets.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "untangle/core.hpp"
#include "untangle/random.hpp"

namespace untangle {

/// Member count used when a Dirichlet has to be represented by samples.
inline constexpr std::size_t kMaterializedMembers = 1000;

/// Draws M probability vectors from Dir(beta) by normalized gammas. Member
/// logits are the logs of the clamped draws, so the derived probabilities
/// reproduce each draw up to the epsilon policy.
inline PredictionSet dirichlet_sample(std::span<const double> beta, std::size_t members, std::uint64_t seed,
                                      std::uint64_t stream_index = 0, double epsilon = kEpsilon) {
  const std::size_t classes = beta.size();
  for (double b : beta) {
    if (!(b > 0.0)) throw Error(ErrorKind::InvalidInput, "Dirichlet parameters must be positive");
  }
  Rng rng(seed, Stream::Materialize, stream_index);
  std::vector<double> logits(members * classes);
  std::vector<double> draw(classes);
  std::vector<double> clamped(classes);
  for (std::size_t m = 0; m < members; ++m) {
    rng.dirichlet(beta, draw);
    clamp_simplex_into(draw, clamped, epsilon);
    for (std::size_t c = 0; c < classes; ++c) logits[m * classes + c] = std::log(clamped[c]);
  }
  return PredictionSet(members, classes, std::move(logits));
}

inline PredictionSet dirichlet_sample(const DirichletPrediction& d, std::size_t members, std::uint64_t seed,
                                      std::uint64_t stream_index = 0, double epsilon = kEpsilon) {
  return dirichlet_sample(d.beta(), members, seed, stream_index, epsilon);
}

/// Member logits mean + stddev * N(0, I) with a diagonal standard deviation.
inline PredictionSet gaussian_logit_sample(std::span<const double> mean, std::span<const double> stddev,
                                           std::size_t members, std::uint64_t seed,
                                           std::uint64_t stream_index = 0) {
  if (mean.size() != stddev.size()) throw Error(ErrorKind::ShapeError, "mean and stddev lengths differ");
  const std::size_t classes = mean.size();
  Rng rng(seed, Stream::Member, stream_index);
  std::vector<double> logits(members * classes);
  for (std::size_t m = 0; m < members; ++m) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (!(stddev[c] >= 0.0)) throw Error(ErrorKind::InvalidInput, "negative standard deviation");
      logits[m * classes + c] = mean[c] + stddev[c] * rng.normal();
    }
  }
  return PredictionSet(members, classes, std::move(logits));
}

}  // namespace untangle
