#include "physssm/optim.hpp"

#include <cmath>

#include "physssm/errors.hpp"

namespace physssm {

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0)) throw ConfigError("adam: learning rate must be positive");
  for (auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    if (p->grad.size() != p->value.size()) p->zero_grad();
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

double Adam::step() {
  double sq = 0.0;
  for (auto* p : params_) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("adam: non-finite gradient");
  const double clip =
      (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Parameter& p = *params_[k];
    const Matrix g = p.grad * clip;
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g;
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.value.array() -= config_.lr * (m_[k].array() / c1) /
                       ((v_[k].array() / c2).sqrt() + config_.eps);
  }
  return norm;
}

}  // namespace physssm
