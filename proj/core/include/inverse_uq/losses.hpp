#pragma once

// Training objectives and the uncertainty-weighting machinery.
//
// Graph versions take ad::Var operands and are differentiable; value
// versions take plain matrices and are used for evaluation and oracles.

#include "inverse_uq/autodiff.hpp"

#include <string>
#include <vector>

namespace inverse_uq::losses {

using ad::Matrix;
using ad::Vector;

struct LossWeights {
  double lambda_rec = 1.0;
  double lambda_cont = 0.3;
  double lambda_inv = 1.0;
  double tau = 0.5;

  /// Throws std::invalid_argument unless tau > 0, all lambdas >= 0 and at
  /// least one is positive.
  void validate() const;
};

struct PenaltyVector {
  Vector w;
  double eigenvalue = 0.0;
  Vector eigenvector;
  double gamma = 0.5;
  bool uniform_fallback = false;  // ties or zero matrix
};

// ---- Graph losses -------------------------------------------------------------

/// Mean of per-sequence MSEs. Both operands are time-major stacks of the same
/// shape; every sequence has the same length, so this is the overall mean.
ad::Var reconstruction_loss(const ad::Var& reconstructed, const ad::Var& target);

/// NT-Xent over 2N embeddings: anchors and positives are N x d.
ad::Var contrastive_loss(const ad::Var& anchors, const ad::Var& positives, double tau);

/// Weighted, masked squared error: sum_ij mask_i w_j (z_ij - zhat_ij)^2 / (n D),
/// n = number of unmasked rows. Returns a zero constant when n = 0.
ad::Var weighted_pseudo_inverse_loss(const ad::Var& predicted, const Matrix& target, const std::vector<bool>& mask,
                                     const Vector& weights);

// ---- Value losses -------------------------------------------------------------

/// Throws std::invalid_argument for an empty batch or shape mismatch.
double reconstruction_loss(const std::vector<Matrix>& reconstructed, const std::vector<Matrix>& target);

struct Cosine {
  double value = 0.0;
  bool degenerate = false;  // a norm below 1e-12; value is 0
};
Cosine cosine_similarity(const Vector& u, const Vector& v);

double contrastive_loss(const Matrix& anchors, const Matrix& positives, double tau);

struct InverseLoss {
  double value = 0.0;
  bool empty = false;  // no labelled rows
};
InverseLoss pseudo_inverse_loss(const Matrix& target, const Matrix& predicted);
InverseLoss weighted_pseudo_inverse_loss(const Matrix& target, const Matrix& predicted, const Vector& weights);

/// Population std over windows (rows) of each characteristic.
Vector temporal_uncertainty(const Matrix& window_predictions, const Vector& mean_prediction);
Vector temporal_uncertainty(const Matrix& window_predictions);

/// Throws TrainingError naming the first non-finite component.
double total_loss(double l_rec, double l_cont, double l_inv, const LossWeights& weights);
ad::Var total_loss(const ad::Var& l_rec, const ad::Var& l_cont, const ad::Var& l_inv, const LossWeights& weights);

/// data + kl_weight * kl. Throws ContractError for kl < 0.
double variational_free_energy(double data_term, double kl, double kl_weight);
ad::Var variational_free_energy(const ad::Var& data_term, const ad::Var& kl, double kl_weight);

/// Blends |top eigenvector| (scaled to mean 1) with the uniform vector.
PenaltyVector ubl_penalty_vector(const Matrix& sigma, double gamma);

/// Mean of per-basin sample covariances of posterior draws (each S x D_z).
Matrix epistemic_uncertainty_matrix(const std::vector<Matrix>& draws_per_basin);

}  // namespace inverse_uq::losses
