#pragma once

// Domain types and simplex-safe numeric primitives shared by every module.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace untangle {

/// Probabilities entering a logarithm are clamped to [kEpsilon, 1] and renormalized.
inline constexpr double kEpsilon = 1e-12;

enum class ErrorKind {
  InvalidInput,
  ShapeError,
  MissingSoftLabel,
  UnknownKind,
  DegenerateTargets,
  DegenerateDataset,
  ConstantInput,
  InvalidBaseline,
  EmptyInput,
  SingularCovariance,
  MissingClass,
  BadMagic,
  BadVersion,
  TruncatedPayload,
  TrailingData,
  FlagConflict,
  IdMismatch,
  ParseError,
  IoError,
  MissingInput,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::MissingSoftLabel: return "MissingSoftLabel";
    case ErrorKind::UnknownKind: return "UnknownKind";
    case ErrorKind::DegenerateTargets: return "DegenerateTargets";
    case ErrorKind::DegenerateDataset: return "DegenerateDataset";
    case ErrorKind::ConstantInput: return "ConstantInput";
    case ErrorKind::InvalidBaseline: return "InvalidBaseline";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::SingularCovariance: return "SingularCovariance";
    case ErrorKind::MissingClass: return "MissingClass";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::BadVersion: return "BadVersion";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::TrailingData: return "TrailingData";
    case ErrorKind::FlagConflict: return "FlagConflict";
    case ErrorKind::IdMismatch: return "IdMismatch";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::MissingInput: return "MissingInput";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the category prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

// ----------------------------------------------------------------------------
// Primitives on raw spans
// ----------------------------------------------------------------------------

/// Max-subtracted softmax. Throws InvalidInput on non-finite logits.
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  if (logits.size() != out.size()) throw Error(ErrorKind::ShapeError, "softmax output size mismatch");
  if (logits.empty()) throw Error(ErrorKind::InvalidInput, "softmax of empty vector");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double v : logits) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidInput, "non-finite logit");
    max_logit = std::max(max_logit, v);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = std::exp(logits[c] - max_logit);
    total += out[c];
  }
  for (double& p : out) p /= total;
}

/// Clamp every entry to [epsilon, 1] and renormalize.
inline void clamp_simplex_into(std::span<const double> p, std::span<double> out,
                               double epsilon = kEpsilon) {
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    out[c] = std::clamp(p[c], epsilon, 1.0);
    total += out[c];
  }
  for (double& v : out) v /= total;
}

inline std::vector<double> clamp_simplex(std::span<const double> p, double epsilon = kEpsilon) {
  std::vector<double> out(p.size());
  clamp_simplex_into(p, out, epsilon);
  return out;
}

/// -sum p ln p with 0 ln 0 := 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

/// -sum p ln q; q is clamped by the epsilon policy, p is used as weights.
inline double cross_entropy(std::span<const double> p, std::span<const double> q,
                            double epsilon = kEpsilon) {
  if (p.size() != q.size()) throw Error(ErrorKind::ShapeError, "cross_entropy length mismatch");
  const std::vector<double> qc = clamp_simplex(q, epsilon);
  double ce = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) ce -= p[c] * std::log(qc[c]);
  }
  return ce;
}

/// KL(p || q) in nats. Only q is clamped; terms with p_c = 0 contribute nothing.
inline double kl_divergence(std::span<const double> p, std::span<const double> q,
                            double epsilon = kEpsilon) {
  if (p.size() != q.size()) throw Error(ErrorKind::ShapeError, "kl_divergence length mismatch");
  const std::vector<double> qc = clamp_simplex(q, epsilon);
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) kl += p[c] * (std::log(p[c]) - std::log(qc[c]));
  }
  return std::max(kl, 0.0);
}

inline double log_sum_exp(std::span<const double> values) {
  double max_v = -std::numeric_limits<double>::infinity();
  for (double v : values) max_v = std::max(max_v, v);
  if (!std::isfinite(max_v)) return max_v;
  double total = 0.0;
  for (double v : values) total += std::exp(v - max_v);
  return max_v + std::log(total);
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ----------------------------------------------------------------------------
// Domain types
// ----------------------------------------------------------------------------

class LogitVector {
 public:
  explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw Error(ErrorKind::ShapeError, "logit vector needs at least 2 classes");
    for (double v : values_) {
      if (!std::isfinite(v)) throw Error(ErrorKind::InvalidInput, "non-finite logit");
    }
  }

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<double> values_;
};

class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw Error(ErrorKind::ShapeError, "probability vector needs at least 2 classes");
    double total = 0.0;
    for (double v : values_) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidInput, "probability outside [0,1]");
      total += v;
    }
    if (std::abs(total - 1.0) > kSumTolerance) throw Error(ErrorKind::InvalidInput, "probabilities do not sum to 1");
  }

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  bool operator==(const ProbVector&) const = default;

 private:
  std::vector<double> values_;
};

inline ProbVector softmax(const LogitVector& logits) {
  std::vector<double> out(logits.size());
  softmax_into(logits.values(), out);
  return ProbVector(std::move(out));
}

inline double entropy(const ProbVector& p) { return entropy(p.values()); }

inline double kl_divergence(const ProbVector& p, const ProbVector& q, double epsilon = kEpsilon) {
  return kl_divergence(p.values(), q.values(), epsilon);
}

/// M x C logits with their row-wise softmax. Probabilities are always derived.
class PredictionSet {
 public:
  PredictionSet(std::size_t members, std::size_t classes, std::vector<double> logits)
      : members_(members), classes_(classes), logits_(std::move(logits)), probs_(logits_.size()) {
    if (members_ < 1) throw Error(ErrorKind::ShapeError, "prediction set needs at least one member");
    if (classes_ < 2) throw Error(ErrorKind::ShapeError, "prediction set needs at least 2 classes");
    if (logits_.size() != members_ * classes_) throw Error(ErrorKind::ShapeError, "logit matrix size mismatch");
    for (std::size_t m = 0; m < members_; ++m) {
      softmax_into(logit_row(m), std::span<double>(probs_).subspan(m * classes_, classes_));
    }
  }

  static PredictionSet from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw Error(ErrorKind::ShapeError, "prediction set needs at least one member");
    const std::size_t classes = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * classes);
    for (const auto& r : rows) {
      if (r.size() != classes) throw Error(ErrorKind::ShapeError, "ragged logit rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return PredictionSet(rows.size(), classes, std::move(flat));
  }

  /// Logits are log of the clamped probabilities, so softmax recovers them.
  static PredictionSet from_probability_rows(const std::vector<std::vector<double>>& rows,
                                             double epsilon = kEpsilon) {
    std::vector<std::vector<double>> logit_rows;
    logit_rows.reserve(rows.size());
    for (const auto& r : rows) {
      std::vector<double> l = clamp_simplex(r, epsilon);
      for (double& v : l) v = std::log(v);
      logit_rows.push_back(std::move(l));
    }
    return from_rows(logit_rows);
  }

  std::size_t members() const noexcept { return members_; }
  std::size_t classes() const noexcept { return classes_; }
  std::span<const double> logits() const noexcept { return logits_; }
  std::span<const double> probs() const noexcept { return probs_; }
  std::span<const double> logit_row(std::size_t m) const {
    return std::span<const double>(logits_).subspan(m * classes_, classes_);
  }
  std::span<const double> prob_row(std::size_t m) const {
    return std::span<const double>(probs_).subspan(m * classes_, classes_);
  }

 private:
  std::size_t members_;
  std::size_t classes_;
  std::vector<double> logits_;
  std::vector<double> probs_;
};

class DirichletPrediction {
 public:
  explicit DirichletPrediction(std::vector<double> beta) : beta_(std::move(beta)) {
    if (beta_.size() < 2) throw Error(ErrorKind::ShapeError, "Dirichlet needs at least 2 classes");
    strength_ = 0.0;
    for (double b : beta_) {
      if (!(b > 0.0) || !std::isfinite(b)) throw Error(ErrorKind::InvalidInput, "Dirichlet parameters must be positive and finite");
      strength_ += b;
    }
  }

  /// Evidential mapping beta = evidence + 1.
  static DirichletPrediction from_evidence(std::span<const double> evidence) {
    std::vector<double> beta(evidence.begin(), evidence.end());
    for (double& b : beta) {
      if (!(b >= 0.0)) throw Error(ErrorKind::InvalidInput, "evidence must be non-negative");
      b += 1.0;
    }
    return DirichletPrediction(std::move(beta));
  }

  std::span<const double> beta() const noexcept { return beta_; }
  std::size_t classes() const noexcept { return beta_.size(); }
  double strength() const noexcept { return strength_; }
  std::vector<double> mean() const {
    std::vector<double> m(beta_);
    for (double& v : m) v /= strength_;
    return m;
  }

 private:
  std::vector<double> beta_;
  double strength_ = 0.0;
};

class SoftLabel {
 public:
  explicit SoftLabel(std::vector<std::uint32_t> votes) : votes_(std::move(votes)) {
    if (votes_.size() < 2) throw Error(ErrorKind::ShapeError, "soft label needs at least 2 classes");
    std::uint64_t total = 0;
    for (auto v : votes_) total += v;
    if (total < 1) throw Error(ErrorKind::InvalidInput, "soft label needs at least one vote");
    pi_star_.resize(votes_.size());
    for (std::size_t c = 0; c < votes_.size(); ++c) {
      pi_star_[c] = static_cast<double>(votes_[c]) / static_cast<double>(total);
    }
  }

  std::span<const std::uint32_t> votes() const noexcept { return votes_; }
  std::span<const double> pi_star() const noexcept { return pi_star_; }
  std::size_t classes() const noexcept { return votes_.size(); }
  /// More than one class received votes.
  bool ambiguous() const {
    return std::count_if(votes_.begin(), votes_.end(), [](auto v) { return v > 0; }) > 1;
  }

 private:
  std::vector<std::uint32_t> votes_;
  std::vector<double> pi_star_;
};

using Prediction = std::variant<PredictionSet, DirichletPrediction>;

inline std::size_t num_classes(const Prediction& p) {
  return std::visit([](const auto& v) { return v.classes(); }, p);
}

struct SampleRecord {
  std::string id;
  Prediction prediction;
  std::size_t label = 0;
  std::optional<SoftLabel> soft_label;
  bool ood = false;
  int severity = 0;

  void validate() const {
    const std::size_t c = num_classes(prediction);
    if (label >= c) throw Error(ErrorKind::ShapeError, "label out of range for sample " + id);
    if (soft_label && soft_label->classes() != c) throw Error(ErrorKind::ShapeError, "votes length differs from class count for sample " + id);
    if (severity < 0 || severity > 5) throw Error(ErrorKind::InvalidInput, "severity outside [0,5] for sample " + id);
    if ((severity == 0) == ood) throw Error(ErrorKind::InvalidInput, "ood flag must equal severity > 0 for sample " + id);
  }
};

/// Checks a dataset shares one class count and returns it (0 for an empty dataset).
inline std::size_t dataset_classes(std::span<const SampleRecord> samples) {
  if (samples.empty()) return 0;
  const std::size_t c = num_classes(samples.front().prediction);
  for (const auto& s : samples) {
    if (num_classes(s.prediction) != c) throw Error(ErrorKind::ShapeError, "mixed class counts in dataset at sample " + s.id);
  }
  return c;
}

}  // namespace untangle
