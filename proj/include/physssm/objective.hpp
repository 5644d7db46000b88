#pragma once

// Training objective: Gaussian reconstruction, step-wise KL between posterior
// and prior, and the physics-state regularizer between their samples.

#include <string>
#include <vector>

#include "physssm/autodiff.hpp"

namespace physssm {

/// Per-step diagonal Gaussians over the latent state.
struct GaussianSeq {
  std::vector<Vector> means;
  std::vector<Vector> stds;
  std::vector<double> times;

  std::size_t size() const { return means.size(); }
  void validate() const;
};

enum class RegMetric { Euclidean, Chebyshev, Cosine };

std::string to_string(RegMetric metric);
RegMetric reg_metric_from_string(const std::string& s);

struct LossBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double beta = 0.0;
  double lambda = 0.0;
};

/// KL(N(qm, qs^2) || N(pm, ps^2)) summed over dimensions.
double kl_gaussian_diag(const Vector& q_mean, const Vector& q_std, const Vector& p_mean,
                        const Vector& p_std);
/// Step-wise KL averaged over timesteps.
double kl_gaussian_diag(const GaussianSeq& q, const GaussianSeq& p);

/// Euclidean: squared norm; Chebyshev: max |a - b|; Cosine: 1 - cos(a, b).
double reg_distance(const Vector& a, const Vector& b, RegMetric metric = RegMetric::Euclidean);
/// Mean of reg_distance over aligned steps.
double physics_state_reg(const std::vector<Vector>& prior_samples,
                         const std::vector<Vector>& post_samples,
                         RegMetric metric = RegMetric::Euclidean);

/// 0.5 * sum of squared errors (unit-scale Gaussian, constants dropped).
double gaussian_recon(const Vector& x, const Vector& x_hat);

LossBreakdown total_loss(double recon, double kl, double reg, double beta, double lambda);

namespace ad {

/// Per-column KL for diagonal Gaussians given means and log-stds; returns (1 x batch).
Var kl_diag(const Var& q_mean, const Var& q_log_std, const Var& p_mean, const Var& p_log_std);
/// Per-column regularizer distance; returns (1 x batch). Chebyshev uses a subgradient.
Var reg_distance(const Var& a, const Var& b, RegMetric metric);

}  // namespace ad
}  // namespace physssm
