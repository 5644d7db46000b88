#pragma once

#include <random>
#include <string>
#include <vector>

#include "physssm/autodiff.hpp"

namespace physssm::nn {

class Linear {
 public:
  Linear() = default;
  /// Weights ~ N(0, gain^2 / in_dim), bias zero.
  Linear(ad::ParameterStore& store, const std::string& name, int in_dim, int out_dim,
         std::mt19937_64& rng, double gain = 1.0);

  ad::Var forward(ad::Tape& tape, const ad::Var& x) const;
  int in_dim() const { return static_cast<int>(weight_->value.cols()); }
  int out_dim() const { return static_cast<int>(weight_->value.rows()); }
  ad::Parameter& weight() const { return *weight_; }
  ad::Parameter& bias() const { return *bias_; }

 private:
  ad::Parameter* weight_ = nullptr;
  ad::Parameter* bias_ = nullptr;
};

/// Stack of Linear layers with GELU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ad::ParameterStore& store, const std::string& name, int in_dim, int hidden, int out_dim,
      int layers, std::mt19937_64& rng);

  ad::Var forward(ad::Tape& tape, const ad::Var& x) const;
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
};

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

}  // namespace physssm::nn
