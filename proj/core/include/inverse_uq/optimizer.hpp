#pragma once

#include "inverse_uq/autodiff.hpp"

#include <span>
#include <vector>

namespace inverse_uq::train {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed list of parameters. The parameters must outlive it.
class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig config);

  void step();
  void zero_grad();
  long steps() const { return steps_; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamConfig config_;
  std::vector<ad::Matrix> m_, v_;
  long steps_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm);

}  // namespace inverse_uq::train
