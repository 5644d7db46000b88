#pragma once

#include <vector>

#include "physssm/autodiff.hpp"

namespace physssm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig config);

  /// Applies one update from the accumulated Parameter::grad; returns the pre-clip norm.
  double step();
  void zero_grad();
  long steps() const { return t_; }
  AdamConfig& config() { return config_; }

 private:
  std::vector<ad::Parameter*> params_;
  std::vector<Matrix> m_, v_;
  AdamConfig config_;
  long t_ = 0;
};

}  // namespace physssm
