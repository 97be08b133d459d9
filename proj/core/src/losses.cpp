#include "inverse_uq/losses.hpp"

#include "inverse_uq/errors.hpp"
#include "inverse_uq/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace inverse_uq::losses {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shapes " + shape(a) + " and " + shape(b) + " differ");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (lambda_rec < 0.0 || lambda_cont < 0.0 || lambda_inv < 0.0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (lambda_rec == 0.0 && lambda_cont == 0.0 && lambda_inv == 0.0) {
    throw std::invalid_argument("at least one loss weight must be positive");
  }
}

// ---- Graph losses -------------------------------------------------------------

ad::Var reconstruction_loss(const ad::Var& reconstructed, const ad::Var& target) {
  require_same_shape(reconstructed.value(), target.value(), "reconstruction_loss");
  if (reconstructed.value().size() == 0) throw std::invalid_argument("reconstruction_loss: empty batch");
  return ad::mean(ad::square(ad::sub(reconstructed, target)));
}

ad::Var contrastive_loss(const ad::Var& anchors, const ad::Var& positives, double tau) {
  require_same_shape(anchors.value(), positives.value(), "contrastive_loss");
  const Eigen::Index n = anchors.rows();
  if (n == 0) throw std::invalid_argument("contrastive_loss: no pairs");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  ad::Graph& g = anchors.graph();

  const ad::Var parts[] = {anchors, positives};
  const ad::Var u = ad::normalize_rows(ad::concat_rows(parts));
  const ad::Var sim = ad::scale(ad::matmul(u, ad::transpose(u)), 1.0 / tau);

  Matrix off_diagonal = Matrix::Ones(2 * n, 2 * n);
  off_diagonal.diagonal().setZero();
  Matrix partner = Matrix::Zero(2 * n, 2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    partner(i, n + i) = 1.0;
    partner(n + i, i) = 1.0;
  }
  const ad::Var log_denominator = ad::log(ad::row_sum(ad::mul(ad::exp(sim), g.constant(off_diagonal))));
  const ad::Var positive = ad::sum(ad::mul(sim, g.constant(partner)));
  return ad::scale(ad::sub(ad::sum(log_denominator), positive), 1.0 / static_cast<double>(2 * n));
}

ad::Var weighted_pseudo_inverse_loss(const ad::Var& predicted, const Matrix& target, const std::vector<bool>& mask,
                                     const Vector& weights) {
  require_same_shape(predicted.value(), target, "pseudo_inverse_loss");
  if (static_cast<Eigen::Index>(mask.size()) != target.rows()) {
    throw DimensionError("pseudo_inverse_loss: mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(target.rows()) + " rows");
  }
  if (weights.size() != target.cols()) {
    throw DimensionError("pseudo_inverse_loss: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(target.cols()) + " characteristics");
  }
  ad::Graph& g = predicted.graph();
  Eigen::Index labelled = 0;
  for (bool m : mask) labelled += m ? 1 : 0;
  if (labelled == 0) return g.constant(Matrix::Zero(1, 1));

  const double denom = static_cast<double>(labelled * target.cols());
  Matrix coeff = Matrix::Zero(target.rows(), target.cols());
  Matrix clean = Matrix::Zero(target.rows(), target.cols());
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    coeff.row(i) = weights.transpose() / denom;
    clean.row(i) = target.row(i);
  }
  return ad::sum(ad::mul(ad::square(ad::sub(predicted, g.constant(clean))), g.constant(coeff)));
}

// ---- Value losses -------------------------------------------------------------

double reconstruction_loss(const std::vector<Matrix>& reconstructed, const std::vector<Matrix>& target) {
  if (reconstructed.empty()) throw std::invalid_argument("reconstruction_loss: empty batch");
  if (reconstructed.size() != target.size()) throw DimensionError("reconstruction_loss: sequence counts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < reconstructed.size(); ++i) {
    require_same_shape(reconstructed[i], target[i], "reconstruction_loss");
    total += (reconstructed[i] - target[i]).squaredNorm() / static_cast<double>(target[i].size());
  }
  return total / static_cast<double>(reconstructed.size());
}

Cosine cosine_similarity(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw DimensionError("cosine_similarity: lengths differ");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu < 1e-12 || nv < 1e-12) return Cosine{0.0, true};
  return Cosine{std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0), false};
}

double contrastive_loss(const Matrix& anchors, const Matrix& positives, double tau) {
  require_same_shape(anchors, positives, "contrastive_loss");
  const Eigen::Index n = anchors.rows();
  if (n == 0) throw std::invalid_argument("contrastive_loss: no pairs");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  Matrix all(2 * n, anchors.cols());
  all << anchors, positives;
  double total = 0.0;
  for (Eigen::Index r = 0; r < 2 * n; ++r) {
    const Eigen::Index partner = r < n ? r + n : r - n;
    double denominator = 0.0;
    for (Eigen::Index c = 0; c < 2 * n; ++c) {
      if (c == r) continue;
      denominator += std::exp(cosine_similarity(all.row(r), all.row(c)).value / tau);
    }
    total += -(cosine_similarity(all.row(r), all.row(partner)).value / tau - std::log(denominator));
  }
  return total / static_cast<double>(2 * n);
}

InverseLoss pseudo_inverse_loss(const Matrix& target, const Matrix& predicted) {
  return weighted_pseudo_inverse_loss(target, predicted, Vector::Ones(target.cols()));
}

InverseLoss weighted_pseudo_inverse_loss(const Matrix& target, const Matrix& predicted, const Vector& weights) {
  require_same_shape(target, predicted, "pseudo_inverse_loss");
  if (weights.size() != target.cols()) throw DimensionError("pseudo_inverse_loss: weight length mismatch");
  if (target.rows() == 0) return InverseLoss{0.0, true};
  const Matrix sq = (target - predicted).array().square().matrix();
  const double total = (sq * weights).sum();
  return InverseLoss{total / static_cast<double>(target.rows() * target.cols()), false};
}

Vector temporal_uncertainty(const Matrix& window_predictions, const Vector& mean_prediction) {
  if (window_predictions.rows() == 0) throw std::invalid_argument("temporal_uncertainty: no windows");
  if (mean_prediction.size() != window_predictions.cols()) {
    throw DimensionError("temporal_uncertainty: mean length mismatch");
  }
  const Matrix centred = window_predictions.rowwise() - mean_prediction.transpose();
  return (centred.array().square().colwise().sum() / static_cast<double>(window_predictions.rows()))
      .sqrt()
      .transpose();
}

Vector temporal_uncertainty(const Matrix& window_predictions) {
  if (window_predictions.rows() == 0) throw std::invalid_argument("temporal_uncertainty: no windows");
  return temporal_uncertainty(window_predictions, window_predictions.colwise().mean().transpose());
}

double total_loss(double l_rec, double l_cont, double l_inv, const LossWeights& weights) {
  if (!std::isfinite(l_rec)) throw TrainingError("reconstruction loss is not finite");
  if (!std::isfinite(l_cont)) throw TrainingError("contrastive loss is not finite");
  if (!std::isfinite(l_inv)) throw TrainingError("pseudo-inverse loss is not finite");
  return weights.lambda_rec * l_rec + weights.lambda_cont * l_cont + weights.lambda_inv * l_inv;
}

ad::Var total_loss(const ad::Var& l_rec, const ad::Var& l_cont, const ad::Var& l_inv, const LossWeights& weights) {
  total_loss(l_rec.scalar(), l_cont.scalar(), l_inv.scalar(), weights);
  return ad::add(ad::add(ad::scale(l_rec, weights.lambda_rec), ad::scale(l_cont, weights.lambda_cont)),
                 ad::scale(l_inv, weights.lambda_inv));
}

double variational_free_energy(double data_term, double kl, double kl_weight) {
  if (kl < 0.0) throw ContractError("variational_free_energy: negative KL");
  return data_term + kl_weight * kl;
}

ad::Var variational_free_energy(const ad::Var& data_term, const ad::Var& kl, double kl_weight) {
  variational_free_energy(data_term.scalar(), kl.scalar(), kl_weight);
  return ad::add(data_term, ad::scale(kl, kl_weight));
}

PenaltyVector ubl_penalty_vector(const Matrix& sigma, double gamma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0) {
    throw std::invalid_argument("ubl_penalty_vector: sigma must be a non-empty square matrix");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("ubl_penalty_vector: gamma must lie in [0, 1]");
  if (!linalg::is_symmetric(sigma, 1e-8)) throw std::invalid_argument("ubl_penalty_vector: sigma is not symmetric");

  const Eigen::Index d = sigma.rows();
  PenaltyVector out;
  out.gamma = gamma;
  out.w = Vector::Ones(d);
  out.eigenvector = Vector::Zero(d);
  if (sigma.cwiseAbs().maxCoeff() == 0.0) {
    out.uniform_fallback = true;
    return out;
  }

  const auto eig = linalg::symmetric_eigen(sigma);
  out.eigenvalue = eig.values(0);
  out.eigenvector = eig.vectors.col(0);
  const double scale = std::max(std::abs(eig.values(0)), std::abs(eig.values(d - 1)));
  if (d > 1 && eig.values(0) - eig.values(1) < 1e-9 * scale) {
    out.uniform_fallback = true;
    return out;
  }
  const Vector magnitude = out.eigenvector.cwiseAbs();
  const Vector normalized = magnitude / magnitude.mean();
  out.w = (1.0 - gamma) * Vector::Ones(d) + gamma * normalized;
  return out;
}

Matrix epistemic_uncertainty_matrix(const std::vector<Matrix>& draws_per_basin) {
  if (draws_per_basin.empty()) throw std::invalid_argument("epistemic_uncertainty_matrix: no basins");
  const Eigen::Index d = draws_per_basin.front().cols();
  Matrix total = Matrix::Zero(d, d);
  for (const Matrix& draws : draws_per_basin) {
    if (draws.cols() != d) throw DimensionError("epistemic_uncertainty_matrix: inconsistent widths");
    if (draws.rows() < 2) throw std::invalid_argument("epistemic_uncertainty_matrix: need at least 2 draws per basin");
    total += linalg::sample_covariance(draws);
  }
  return total / static_cast<double>(draws_per_basin.size());
}

}  // namespace inverse_uq::losses
