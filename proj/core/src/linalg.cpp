#include "inverse_uq/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace inverse_uq::linalg {

bool is_symmetric(const Matrix& a, double tolerance) {
  if (a.rows() != a.cols()) return false;
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tolerance;
}

SymmetricEigen symmetric_eigen(const Matrix& input, double tolerance, int max_sweeps) {
  if (input.rows() != input.cols()) throw std::invalid_argument("symmetric_eigen: matrix is not square");
  const Eigen::Index n = input.rows();
  Matrix a = input;
  Matrix v = Matrix::Identity(n, n);

  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tolerance * scale) break;

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) { return a(l, l) > a(r, r); });

  SymmetricEigen out{Vector(n), Matrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    out.values(i) = a(src, src);
    out.vectors.col(i) = v.col(src).normalized();
  }
  return out;
}

Matrix sample_covariance(const Matrix& samples) {
  if (samples.rows() < 2) throw std::invalid_argument("sample_covariance: need at least two observations");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean;
  Matrix cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

}  // namespace inverse_uq::linalg
