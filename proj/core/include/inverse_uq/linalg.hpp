#pragma once

#include <Eigen/Dense>

namespace inverse_uq::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted in descending order,
/// eigenvectors stored as unit-norm columns in the same order.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};

/// Cyclic Jacobi rotation solver. Throws std::invalid_argument for a
/// non-square input; symmetry is the caller's responsibility (only the upper
/// triangle is trusted to mirror the lower one).
SymmetricEigen symmetric_eigen(const Matrix& a, double tolerance = 1e-15, int max_sweeps = 100);

bool is_symmetric(const Matrix& a, double tolerance);

/// Covariance of the rows of `samples` (one observation per row), divisor n - 1.
Matrix sample_covariance(const Matrix& samples);

}  // namespace inverse_uq::linalg
