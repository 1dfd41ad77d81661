#pragma once

// Aggregation over either prediction kind, and over whole datasets.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "untangle/aggregate.hpp"
#include "untangle/decompose.hpp"
#include "untangle/parallel.hpp"
#include "untangle/sampling.hpp"

namespace untangle {

struct AggregateOptions {
  double epsilon = kEpsilon;
  /// Seed for Dirichlet materialization; the sample index selects the stream.
  std::uint64_t seed = 0;
  std::size_t materialized_members = kMaterializedMembers;
  std::size_t workers = 1;
};

/// Scores for several kinds on one prediction. A Dirichlet uses its closed
/// form for the entropy terms, its strength for D-S, and one shared seeded
/// materialization for everything else.
inline std::vector<double> aggregate_many(const Prediction& prediction, std::span<const AggregatorKind> kinds,
                                          const std::optional<SoftLabel>& soft, const AggregateOptions& options,
                                          std::uint64_t sample_index = 0) {
  std::vector<double> out;
  out.reserve(kinds.size());
  if (const auto* set = std::get_if<PredictionSet>(&prediction)) {
    for (AggregatorKind k : kinds) out.push_back(aggregate(*set, k, soft, options.epsilon));
    return out;
  }
  const auto& dir = std::get<DirichletPrediction>(prediction);
  std::optional<PredictionSet> materialized;
  std::optional<ItDecomposition> closed;
  for (AggregatorKind k : kinds) {
    switch (k) {
      case AggregatorKind::DEMPSTER_SHAFER:
        out.push_back(dempster_shafer(dir));
        break;
      case AggregatorKind::PU_IT:
      case AggregatorKind::AU_IT:
      case AggregatorKind::EU_IT:
        if (!closed) closed = it_decompose_dirichlet(dir);
        out.push_back(k == AggregatorKind::PU_IT   ? closed->predictive
                      : k == AggregatorKind::AU_IT ? closed->aleatoric
                                                   : closed->epistemic);
        break;
      default:
        if (!materialized) {
          materialized = dirichlet_sample(dir, options.materialized_members, options.seed, sample_index,
                                          options.epsilon);
        }
        out.push_back(aggregate(*materialized, k, soft, options.epsilon));
    }
  }
  return out;
}

inline double aggregate(const Prediction& prediction, AggregatorKind kind, const std::optional<SoftLabel>& soft,
                        const AggregateOptions& options, std::uint64_t sample_index = 0) {
  const AggregatorKind kinds[] = {kind};
  return aggregate_many(prediction, kinds, soft, options, sample_index).front();
}

/// Argmax of the BMA, or of the Dirichlet mean.
inline std::size_t predicted_class(const Prediction& prediction) {
  if (const auto* set = std::get_if<PredictionSet>(&prediction)) return argmax(detail::bma_values(*set));
  return argmax(std::get<DirichletPrediction>(prediction).beta());
}

/// Row-major (sample, kind) score table.
struct ScoreTable {
  std::vector<std::string> ids;
  std::vector<AggregatorKind> kinds;
  std::vector<double> values;

  std::size_t rows() const noexcept { return ids.size(); }
  double at(std::size_t row, std::size_t col) const { return values[row * kinds.size() + col]; }
  std::vector<double> column(AggregatorKind kind) const {
    const auto it = std::find(kinds.begin(), kinds.end(), kind);
    if (it == kinds.end()) throw Error(ErrorKind::UnknownKind, "kind not present in score table");
    const std::size_t col = static_cast<std::size_t>(it - kinds.begin());
    std::vector<double> out(rows());
    for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, col);
    return out;
  }
  bool operator==(const ScoreTable&) const = default;
};

inline ScoreTable aggregate_batch(std::span<const SampleRecord> samples, std::span<const AggregatorKind> kinds,
                                  const AggregateOptions& options = {}) {
  ScoreTable table;
  table.kinds.assign(kinds.begin(), kinds.end());
  if (samples.empty()) return table;
  dataset_classes(samples);
  for (AggregatorKind k : kinds) {
    if (!requires_soft_label(k)) continue;
    for (const auto& s : samples) {
      if (!s.soft_label) {
        throw Error(ErrorKind::MissingSoftLabel,
                    std::string(to_string(k)) + " requires soft labels; sample " + s.id + " has none");
      }
    }
  }
  table.ids.resize(samples.size());
  table.values.resize(samples.size() * kinds.size());
  parallel_for(samples.size(), options.workers, [&](std::size_t i) {
    const auto& s = samples[i];
    table.ids[i] = s.id;
    try {
      const auto scores = aggregate_many(s.prediction, kinds, s.soft_label, options, i);
      std::copy(scores.begin(), scores.end(), table.values.begin() + static_cast<std::ptrdiff_t>(i * kinds.size()));
    } catch (const Error& e) {
      throw Error(e.kind(), "sample " + s.id + ": " + e.message());
    }
  });
  return table;
}

}  // namespace untangle
