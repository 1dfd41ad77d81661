#pragma once

// Post-hoc scorers fitted on exported embeddings and logits: tied-covariance
// Mahalanobis latent density with a logistic layer combiner, a class-wise
// Gaussian mixture density (DDU), and grid-search temperature scaling.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "untangle/core.hpp"

namespace untangle {

struct EmbeddingRecord {
  std::string id;
  /// One embedding per layer; the last layer is the pre-logit layer.
  std::vector<std::vector<double>> layers;
  std::size_t label = 0;
  bool ood = false;
};

/// A symmetric positive-definite matrix with its Cholesky factor.
struct SpdFactor {
  Eigen::MatrixXd matrix;  // after jitter
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
  double log_det = 0.0;

  /// (x - mu)^T M^{-1} (x - mu).
  double quadratic(const Eigen::VectorXd& diff) const {
    const Eigen::VectorXd z = llt.matrixL().solve(diff);
    return z.squaredNorm();
  }
};

/// Cholesky with the jitter policy: accept the plain factorization when it is
/// numerically full rank, otherwise add lambda * I starting at
/// 1e-6 * trace / D (1e-6 for a zero trace), doubling up to 10 times.
inline SpdFactor factor_spd(const Eigen::MatrixXd& cov) {
  const auto d = static_cast<double>(cov.rows());
  const double mean_diag = cov.trace() / d;
  SpdFactor out;
  auto accept = [&](const Eigen::MatrixXd& m, double lambda) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    const double floor = 1e-10 * std::max(mean_diag, std::numeric_limits<double>::min());
    if (!(diag.array().square().minCoeff() > floor)) return false;
    out.matrix = m;
    out.llt = std::move(llt);
    out.jitter = lambda;
    out.log_det = 2.0 * diag.array().log().sum();
    return true;
  };
  if (accept(cov, 0.0)) return out;
  double lambda = mean_diag > 0.0 ? 1e-6 * mean_diag : 1e-6;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
  for (int attempt = 0; attempt <= 10; ++attempt, lambda *= 2.0) {
    if (accept(cov + lambda * eye, lambda)) return out;
  }
  throw Error(ErrorKind::SingularCovariance, "covariance not positive definite after jitter");
}

inline Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ----------------------------------------------------------------------------
// Logistic regression (L2, Newton with backtracking)
// ----------------------------------------------------------------------------

struct LogisticModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double loss = 0.0;
  int iterations = 0;

  double decision(const Eigen::VectorXd& x) const { return weights.dot(x) + intercept; }
};

struct LogisticOptions {
  double l2 = 1e-4;
  double tolerance = 1e-8;
  int max_iterations = 200;
};

namespace detail {

inline double log1p_exp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// Features are standardized internally; the returned weights act on raw
/// features. The penalty applies to the standardized weights, not the intercept.
inline LogisticModel fit_logistic(const Eigen::MatrixXd& features, const std::vector<bool>& targets,
                                  const LogisticOptions& options = {}) {
  const Eigen::Index n = features.rows();
  const Eigen::Index p = features.cols();
  if (n == 0 || static_cast<std::size_t>(n) != targets.size()) throw Error(ErrorKind::ShapeError, "logistic regression input shape");
  const Eigen::RowVectorXd mean = features.colwise().mean();
  Eigen::RowVectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double sd = std::sqrt((features.col(j).array() - mean(j)).square().mean());
    scale(j) = sd > 0.0 ? sd : 1.0;
  }
  Eigen::MatrixXd x(n, p + 1);
  x.leftCols(p) = (features.rowwise() - mean).array().rowwise() / scale.array();
  x.col(p).setOnes();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0;

  auto loss_at = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = x * beta;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += detail::log1p_exp(z(i)) - y(i) * z(i);
    return total / static_cast<double>(n) + 0.5 * options.l2 * beta.head(p).squaredNorm();
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  double loss = loss_at(beta);
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd z = x * beta;
    Eigen::VectorXd prob(n);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob(i) = detail::sigmoid(z(i));
      w(i) = prob(i) * (1.0 - prob(i));
    }
    Eigen::VectorXd grad = x.transpose() * (prob - y) / static_cast<double>(n);
    grad.head(p) += options.l2 * beta.head(p);
    Eigen::MatrixXd hess = x.transpose() * w.asDiagonal() * x / static_cast<double>(n);
    hess.diagonal().head(p).array() += options.l2;
    hess.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd candidate = beta - step;
    double candidate_loss = loss_at(candidate);
    while (candidate_loss > loss && t > 1e-10) {
      t *= 0.5;
      candidate = beta - t * step;
      candidate_loss = loss_at(candidate);
    }
    if (candidate_loss > loss) break;
    const double change = loss - candidate_loss;
    beta = candidate;
    loss = candidate_loss;
    if (change < options.tolerance) {
      ++iter;
      break;
    }
  }

  LogisticModel model;
  model.weights = beta.head(p).array() / scale.transpose().array();
  model.intercept = beta(p) - (model.weights.array() * mean.transpose().array()).sum();
  model.loss = loss;
  model.iterations = iter;
  return model;
}

// ----------------------------------------------------------------------------
// Mahalanobis
// ----------------------------------------------------------------------------

struct MahalanobisLayer {
  std::vector<Eigen::VectorXd> means;  // one per class
  Eigen::MatrixXd tied_covariance;     // before jitter
  SpdFactor factor;

  /// K^{l,c}: negative squared Mahalanobis distance to each class mean.
  std::vector<double> class_scores(const Eigen::VectorXd& x) const {
    std::vector<double> out(means.size());
    for (std::size_t c = 0; c < means.size(); ++c) out[c] = -factor.quadratic(x - means[c]);
    return out;
  }

  double max_score(const Eigen::VectorXd& x) const {
    const auto s = class_scores(x);
    return *std::max_element(s.begin(), s.end());
  }
};

struct MahalanobisModel {
  std::vector<MahalanobisLayer> layers;
  LogisticModel combiner;

  std::size_t classes() const { return layers.empty() ? 0 : layers.front().means.size(); }
};

namespace detail {

inline std::size_t check_layers(std::span<const EmbeddingRecord> records, std::vector<std::size_t>& dims) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no embedding records");
  dims.clear();
  for (const auto& l : records.front().layers) dims.push_back(l.size());
  if (dims.empty()) throw Error(ErrorKind::ShapeError, "embedding records carry no layers");
  for (const auto& r : records) {
    if (r.layers.size() != dims.size()) throw Error(ErrorKind::ShapeError, "layer count differs for record " + r.id);
    for (std::size_t l = 0; l < dims.size(); ++l) {
      if (r.layers[l].size() != dims[l]) throw Error(ErrorKind::ShapeError, "layer dimension differs for record " + r.id);
    }
  }
  return dims.size();
}

inline std::vector<std::size_t> class_counts(std::span<const EmbeddingRecord> train, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& r : train) {
    if (r.label >= classes) throw Error(ErrorKind::ShapeError, "label out of range for record " + r.id);
    ++counts[r.label];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw Error(ErrorKind::MissingClass, "class " + std::to_string(c) + " has no training records");
  }
  return counts;
}

inline std::vector<Eigen::VectorXd> class_means(std::span<const EmbeddingRecord> train, std::size_t layer,
                                                std::size_t dim, const std::vector<std::size_t>& counts) {
  std::vector<Eigen::VectorXd> means(counts.size(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)));
  for (const auto& r : train) means[r.label] += to_eigen(r.layers[layer]);
  for (std::size_t c = 0; c < counts.size(); ++c) means[c] /= static_cast<double>(counts[c]);
  return means;
}

}  // namespace detail

/// Tied covariance: (1/n) sum over records of the scatter around their class mean.
inline Eigen::MatrixXd tied_covariance(std::span<const EmbeddingRecord> train, std::size_t layer,
                                       const std::vector<Eigen::VectorXd>& means) {
  const auto dim = means.front().size();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& r : train) {
    const Eigen::VectorXd diff = to_eigen(r.layers[layer]) - means[r.label];
    cov.noalias() += diff * diff.transpose();
  }
  return cov / static_cast<double>(train.size());
}

inline MahalanobisLayer fit_mahalanobis_layer(std::span<const EmbeddingRecord> train, std::size_t layer,
                                              std::size_t dim, const std::vector<std::size_t>& counts) {
  MahalanobisLayer out;
  out.means = detail::class_means(train, layer, dim, counts);
  out.tied_covariance = tied_covariance(train, layer, out.means);
  out.factor = factor_spd(out.tied_covariance);
  return out;
}

/// Per-layer max class score K^l for each record.
inline Eigen::MatrixXd mahalanobis_features(const MahalanobisModel& model, std::span<const EmbeddingRecord> records) {
  const auto layers = static_cast<Eigen::Index>(model.layers.size());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(records.size()), layers);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].layers.size() != model.layers.size()) throw Error(ErrorKind::ShapeError, "layer count differs for record " + records[i].id);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const auto& emb = records[i].layers[l];
      if (static_cast<Eigen::Index>(emb.size()) != model.layers[l].means.front().size()) {
        throw Error(ErrorKind::ShapeError, "layer dimension differs for record " + records[i].id);
      }
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = model.layers[l].max_score(to_eigen(emb));
    }
  }
  return out;
}

/// Class means and tied covariance per layer from `train`; layer weights from
/// a logistic OOD detector on the K^l features of the mixed `validation` set.
inline MahalanobisModel fit_mahalanobis(std::span<const EmbeddingRecord> train,
                                        std::span<const EmbeddingRecord> validation, std::size_t classes,
                                        const LogisticOptions& options = {}) {
  std::vector<std::size_t> dims;
  detail::check_layers(train, dims);
  const auto counts = detail::class_counts(train, classes);
  MahalanobisModel model;
  for (std::size_t l = 0; l < dims.size(); ++l) model.layers.push_back(fit_mahalanobis_layer(train, l, dims[l], counts));

  if (validation.empty()) throw Error(ErrorKind::EmptyInput, "Mahalanobis needs a validation mix");
  std::vector<bool> targets;
  for (const auto& r : validation) targets.push_back(r.ood);
  const auto positives = std::count(targets.begin(), targets.end(), true);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(targets.size())) {
    throw Error(ErrorKind::DegenerateTargets, "validation mix needs both ID and OOD records");
  }
  model.combiner = fit_logistic(mahalanobis_features(model, validation), targets, options);
  return model;
}

/// sum_l w_l K^l(x); the detector is fitted with OOD as the positive class,
/// so larger values mean more OOD.
inline double score_mahalanobis(const MahalanobisModel& model, const EmbeddingRecord& record) {
  const std::span<const EmbeddingRecord> one(&record, 1);
  const Eigen::VectorXd k = mahalanobis_features(model, one).row(0).transpose();
  return model.combiner.weights.dot(k);
}

// ----------------------------------------------------------------------------
// Temperature scaling
// ----------------------------------------------------------------------------

/// Mean negative log-likelihood of softmax(logits / tau).
inline double temperature_nll(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels,
                              double tau) {
  double total = 0.0;
  std::vector<double> scaled;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    scaled.assign(logits[i].begin(), logits[i].end());
    for (double& v : scaled) v /= tau;
    total += log_sum_exp(scaled) - scaled[labels[i]];
  }
  return total / static_cast<double>(logits.size());
}

/// tau in {0.1, 0.2, ..., 10.1} minimizing validation NLL. Exact ties go to
/// the tau nearest 1.0, then to the smaller tau.
inline double temperature_scale(std::span<const std::vector<double>> logits, std::span<const std::size_t> labels) {
  if (logits.empty()) throw Error(ErrorKind::EmptyInput, "temperature scaling needs validation logits");
  if (logits.size() != labels.size()) throw Error(ErrorKind::ShapeError, "logits and labels differ in length");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] >= logits[i].size()) throw Error(ErrorKind::ShapeError, "label out of range");
  }
  double best_tau = 1.0;
  double best_nll = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 101; ++k) {
    const double tau = static_cast<double>(k) / 10.0;
    const double nll = temperature_nll(logits, labels, tau);
    const bool better = nll < best_nll ||
                        (nll == best_nll && std::abs(tau - 1.0) < std::abs(best_tau - 1.0));
    if (better) {
      best_nll = nll;
      best_tau = tau;
    }
  }
  return best_tau;
}

inline std::vector<double> apply_temperature(std::span<const double> logits, double tau) {
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& v : scaled) v /= tau;
  std::vector<double> out(scaled.size());
  softmax_into(scaled, out);
  return out;
}

// ----------------------------------------------------------------------------
// DDU Gaussian mixture
// ----------------------------------------------------------------------------

struct DduModel {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<SpdFactor> covariances;
  double temperature = 1.0;

  static DduModel from_parameters(std::vector<double> weights, std::vector<Eigen::VectorXd> means,
                                  const std::vector<Eigen::MatrixXd>& covariances, double temperature = 1.0) {
    if (weights.size() != means.size() || means.size() != covariances.size() || means.empty()) {
      throw Error(ErrorKind::ShapeError, "mixture parameter counts differ");
    }
    DduModel m;
    m.weights = std::move(weights);
    m.means = std::move(means);
    for (const auto& cov : covariances) m.covariances.push_back(factor_spd(cov));
    m.temperature = temperature;
    return m;
  }

  std::size_t dim() const { return static_cast<std::size_t>(means.front().size()); }

  /// ln w_c + ln N(x; mu_c, Sigma_c) per component.
  std::vector<double> component_log_densities(const Eigen::VectorXd& x) const {
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    const auto d = static_cast<double>(x.size());
    std::vector<double> out(means.size());
    for (std::size_t c = 0; c < means.size(); ++c) {
      const double log_n = -0.5 * (d * log_2pi + covariances[c].log_det + covariances[c].quadratic(x - means[c]));
      out[c] = std::log(weights[c]) + log_n;
    }
    return out;
  }
};

/// Pre-logit (last layer) mixture with weights n_c/n, class means and
/// unbiased class covariances; temperature from the validation logits.
inline DduModel fit_ddu(std::span<const EmbeddingRecord> train, std::span<const std::vector<double>> val_logits,
                        std::span<const std::size_t> val_labels, std::size_t classes) {
  std::vector<std::size_t> dims;
  detail::check_layers(train, dims);
  const std::size_t layer = dims.size() - 1;
  const std::size_t dim = dims.back();
  const auto counts = detail::class_counts(train, classes);
  auto means = detail::class_means(train, layer, dim, counts);
  std::vector<Eigen::MatrixXd> covs(classes, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)));
  for (const auto& r : train) {
    const Eigen::VectorXd diff = to_eigen(r.layers[layer]) - means[r.label];
    covs[r.label].noalias() += diff * diff.transpose();
  }
  std::vector<double> weights(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    // A singleton class keeps a zero scatter and relies on jitter.
    if (counts[c] >= 2) covs[c] /= static_cast<double>(counts[c] - 1);
    weights[c] = static_cast<double>(counts[c]) / static_cast<double>(train.size());
  }
  const double tau = val_logits.empty() ? 1.0 : temperature_scale(val_logits, val_labels);
  return DduModel::from_parameters(std::move(weights), std::move(means), covs, tau);
}

/// -log sum_c w_c N(x; mu_c, Sigma_c), evaluated by log-sum-exp.
inline double score_ddu(const DduModel& model, std::span<const double> embedding) {
  if (embedding.size() != model.dim()) throw Error(ErrorKind::ShapeError, "embedding dimension differs from the model");
  return -log_sum_exp(model.component_log_densities(to_eigen(embedding)));
}

}  // namespace untangle
