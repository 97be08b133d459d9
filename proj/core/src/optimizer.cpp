#include "inverse_uq/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace inverse_uq::train {

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  for (const ad::Parameter* p : params_) {
    m_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter& p = *params_[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= config_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.epsilon);
  }
}

void Adam::zero_grad() {
  for (ad::Parameter* p : params_) p->zero_grad();
}

double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (ad::Parameter* p : params) p->grad *= factor;
  }
  return norm;
}

}  // namespace inverse_uq::train
