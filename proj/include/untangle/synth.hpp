#pragma once

// Seeded synthetic second-order predictions with controllable aleatoric and
// epistemic structure.
//
// Per sample i (stream (seed, Sample, i)):
//   * a base class k is uniform; the Bayes predictor pi* ~ Dir(beta*) with
//     beta*_k = 1 and beta*_c = aleatoric_scale elsewhere, so a zero scale
//     gives one-hot pi* and larger scales give more annotator disagreement;
//   * votes_per_sample annotator labels and one hard label are drawn from pi*;
//   * mean logits are ln(pi*) (clamped at 1e-6) plus s * severity_shift * d
//     with d ~ N(0, I) and s the sample's severity level;
//   * members spread around the mean with scale
//     epistemic_scale * (1 + ood_spread * s), by family:
//       gaussian_logits  independent N(0, I) logit noise per member,
//       dirac_ensemble   per-member bias vectors shared by every sample,
//       dirichlet        beta = softmax(mean) * C / spread + 1.
// Severity levels are assigned cyclically, sample i gets levels[i % size].

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "untangle/core.hpp"
#include "untangle/parallel.hpp"
#include "untangle/posthoc.hpp"
#include "untangle/random.hpp"

namespace untangle {

enum class SimFamily { Dirichlet, GaussianLogits, DiracEnsemble };

inline std::string_view to_string(SimFamily f) {
  switch (f) {
    case SimFamily::Dirichlet: return "dirichlet";
    case SimFamily::GaussianLogits: return "gaussian_logits";
    case SimFamily::DiracEnsemble: return "dirac_ensemble";
  }
  return "unknown";
}

inline SimFamily parse_family(std::string_view name) {
  for (SimFamily f : {SimFamily::Dirichlet, SimFamily::GaussianLogits, SimFamily::DiracEnsemble}) {
    if (to_string(f) == name) return f;
  }
  throw Error(ErrorKind::UnknownKind, "unknown simulation family '" + std::string(name) + "'");
}

struct SimConfig {
  std::size_t n = 1000;
  std::size_t classes = 10;
  std::size_t members = 16;
  SimFamily family = SimFamily::GaussianLogits;
  double aleatoric_scale = 0.1;
  double epistemic_scale = 1.0;
  std::vector<int> severity_levels = {0};
  std::uint64_t seed = 0;
  std::uint32_t votes_per_sample = 10;
  double severity_shift = 1.5;
  double ood_spread = 0.5;
  /// Per-layer embedding sizes; empty disables embeddings.
  std::vector<std::size_t> embedding_dims;

  void validate() const {
    if (n < 1 || members < 1) throw Error(ErrorKind::InvalidInput, "n and members must be at least 1");
    if (classes < 2) throw Error(ErrorKind::InvalidInput, "classes must be at least 2");
    if (votes_per_sample < 1) throw Error(ErrorKind::InvalidInput, "votes_per_sample must be positive");
    for (double s : {aleatoric_scale, epistemic_scale, severity_shift, ood_spread}) {
      if (!std::isfinite(s) || s < 0.0) throw Error(ErrorKind::InvalidInput, "scales must be finite and non-negative");
    }
    if (severity_levels.empty()) throw Error(ErrorKind::InvalidInput, "severity_levels must not be empty");
    for (int s : severity_levels) {
      if (s < 0 || s > 5) throw Error(ErrorKind::InvalidInput, "severity levels must lie in [0,5]");
    }
    for (std::size_t d : embedding_dims) {
      if (d < 1) throw Error(ErrorKind::InvalidInput, "embedding dimensions must be positive");
    }
  }
};

struct SimulatedDataset {
  std::vector<SampleRecord> samples;
  std::vector<EmbeddingRecord> embeddings;
};

namespace detail {

inline constexpr std::uint64_t kSharedStreamBase = std::uint64_t{1} << 40;

inline std::vector<double> normal_vector(Rng& rng, std::size_t size) {
  std::vector<double> v(size);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace detail

inline SimulatedDataset simulate(const SimConfig& cfg, std::size_t workers = 1) {
  cfg.validate();
  const std::size_t C = cfg.classes;
  const std::size_t M = cfg.members;

  // Quantities shared by every sample.
  std::vector<std::vector<double>> member_bias;
  if (cfg.family == SimFamily::DiracEnsemble) {
    for (std::size_t m = 0; m < M; ++m) {
      Rng rng(cfg.seed, Stream::Member, detail::kSharedStreamBase + m);
      member_bias.push_back(detail::normal_vector(rng, C));
    }
  }
  // centers[l][c] and severity directions[l][s]
  std::vector<std::vector<std::vector<double>>> centers(cfg.embedding_dims.size());
  std::vector<std::vector<std::vector<double>>> directions(cfg.embedding_dims.size());
  for (std::size_t l = 0; l < cfg.embedding_dims.size(); ++l) {
    const std::size_t d = cfg.embedding_dims[l];
    for (std::size_t c = 0; c < C; ++c) {
      Rng rng(cfg.seed, Stream::Embedding, detail::kSharedStreamBase + l * 4096 + c);
      auto v = detail::normal_vector(rng, d);
      for (double& x : v) x *= 3.0;
      centers[l].push_back(std::move(v));
    }
    for (int s = 0; s <= 5; ++s) {
      Rng rng(cfg.seed, Stream::Severity, detail::kSharedStreamBase + l * 16 + static_cast<std::uint64_t>(s));
      auto v = detail::normal_vector(rng, d);
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : v) x /= (norm > 0.0 ? norm : 1.0);
      directions[l].push_back(std::move(v));
    }
  }

  std::vector<std::optional<SampleRecord>> slots(cfg.n);
  std::vector<EmbeddingRecord> embeddings(cfg.embedding_dims.empty() ? 0 : cfg.n);
  parallel_for(cfg.n, workers, [&](std::size_t i) {
    Rng rng(cfg.seed, Stream::Sample, i);
    const int severity = cfg.severity_levels[i % cfg.severity_levels.size()];
    const auto k = static_cast<std::size_t>(rng.below(C));
    std::vector<double> beta_star(C, cfg.aleatoric_scale);
    beta_star[k] = 1.0;
    std::vector<double> pi_star(C);
    rng.dirichlet(beta_star, pi_star);

    std::vector<std::uint32_t> votes(C, 0);
    for (std::uint32_t v = 0; v < cfg.votes_per_sample; ++v) ++votes[rng.categorical(pi_star)];
    const std::size_t label = rng.categorical(pi_star);

    std::vector<double> mean = clamp_simplex(pi_star, 1e-6);
    for (double& v : mean) v = std::log(v);
    if (severity > 0) {
      Rng shift_rng(cfg.seed, Stream::Severity, i);
      const double magnitude = severity * cfg.severity_shift;
      for (double& v : mean) v += magnitude * shift_rng.normal();
    }
    const double spread = cfg.epistemic_scale * (1.0 + cfg.ood_spread * severity);

    std::optional<Prediction> prediction;
    switch (cfg.family) {
      case SimFamily::GaussianLogits: {
        Rng member_rng(cfg.seed, Stream::Member, i);
        std::vector<double> logits(M * C);
        for (std::size_t m = 0; m < M; ++m) {
          for (std::size_t c = 0; c < C; ++c) logits[m * C + c] = mean[c] + spread * member_rng.normal();
        }
        prediction.emplace(PredictionSet(M, C, std::move(logits)));
        break;
      }
      case SimFamily::DiracEnsemble: {
        std::vector<double> logits(M * C);
        for (std::size_t m = 0; m < M; ++m) {
          for (std::size_t c = 0; c < C; ++c) logits[m * C + c] = mean[c] + spread * member_bias[m][c];
        }
        prediction.emplace(PredictionSet(M, C, std::move(logits)));
        break;
      }
      case SimFamily::Dirichlet: {
        std::vector<double> probs(C);
        softmax_into(mean, probs);
        const double evidence = static_cast<double>(C) / std::max(spread, 1e-12);
        for (double& p : probs) p *= evidence;
        prediction.emplace(DirichletPrediction::from_evidence(probs));
        break;
      }
    }

    SampleRecord rec{std::to_string(i), std::move(*prediction), label, SoftLabel(std::move(votes)), severity > 0,
                     severity};
    slots[i] = std::move(rec);

    if (!cfg.embedding_dims.empty()) {
      Rng emb_rng(cfg.seed, Stream::Embedding, i);
      EmbeddingRecord e;
      e.id = std::to_string(i);
      e.label = label;
      e.ood = severity > 0;
      for (std::size_t l = 0; l < cfg.embedding_dims.size(); ++l) {
        std::vector<double> v = centers[l][label];
        for (std::size_t j = 0; j < v.size(); ++j) {
          v[j] += emb_rng.normal() + 3.0 * severity * directions[l][static_cast<std::size_t>(severity)][j];
        }
        e.layers.push_back(std::move(v));
      }
      embeddings[i] = std::move(e);
    }
  });

  SimulatedDataset out;
  out.samples.reserve(cfg.n);
  for (auto& s : slots) out.samples.push_back(std::move(*s));
  out.embeddings = std::move(embeddings);
  return out;
}

}  // namespace untangle
