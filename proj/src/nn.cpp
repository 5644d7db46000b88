#include "physssm/nn.hpp"

#include <cmath>

#include "physssm/errors.hpp"

namespace physssm::nn {

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = gauss(rng);
  }
  return m;
}

Linear::Linear(ad::ParameterStore& store, const std::string& name, int in_dim, int out_dim,
               std::mt19937_64& rng, double gain) {
  if (in_dim < 0 || out_dim <= 0) throw ConfigError("linear layer " + name + ": bad dimensions");
  const double stddev = in_dim > 0 ? gain / std::sqrt(static_cast<double>(in_dim)) : 0.0;
  weight_ = &store.add(name + "/W", random_normal(out_dim, in_dim, stddev, rng));
  bias_ = &store.add(name + "/b", Matrix::Zero(out_dim, 1));
}

ad::Var Linear::forward(ad::Tape& tape, const ad::Var& x) const {
  return ad::add_bias(ad::matmul(tape.param(*weight_), x), tape.param(*bias_));
}

Mlp::Mlp(ad::ParameterStore& store, const std::string& name, int in_dim, int hidden, int out_dim,
         int layers, std::mt19937_64& rng) {
  if (layers < 1) throw ConfigError("mlp " + name + " needs at least one layer");
  int d = in_dim;
  for (int k = 0; k < layers; ++k) {
    const int out = (k + 1 == layers) ? out_dim : hidden;
    layers_.emplace_back(store, name + "/" + std::to_string(k), d, out, rng);
    d = out;
  }
}

ad::Var Mlp::forward(ad::Tape& tape, const ad::Var& x) const {
  ad::Var h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    h = layers_[k].forward(tape, h);
    if (k + 1 < layers_.size()) h = ad::gelu(h);
  }
  return h;
}

}  // namespace physssm::nn
