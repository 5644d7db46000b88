#pragma once

// Sequential VAE around the physics unit: a causal SSM encoder gives the
// posterior, the unit (or a data-driven SSM transition for the ablation)
// gives the prior, and an MLP decoder emits observations.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "physssm/autodiff.hpp"
#include "physssm/dynamics.hpp"
#include "physssm/nn.hpp"
#include "physssm/objective.hpp"
#include "physssm/ssm.hpp"
#include "physssm/unit.hpp"

namespace physssm {

enum class TransitionKind {
  PhySSM,      // known physics plus masked learned matrices
  DataDriven,  // residual SSM transition on z without physics (ablation)
};

std::string to_string(TransitionKind kind);
TransitionKind transition_from_string(const std::string& s);

struct ModelConfig {
  std::string system = "pendulum";
  int obs_dim = 3;
  double population = 1.0;  // SIR only

  int prenet_hidden = 32;
  int prenet_layers = 2;
  SSMStackConfig encoder{0, 32, 16, 1, DeltaMode::RawGap};

  TransitionKind transition = TransitionKind::PhySSM;
  LearnerConfig learner;
  /// Data-driven transition; width 0 means "match the physics model's parameter count".
  SSMStackConfig data_driven{0, 0, 16, 1, DeltaMode::RawGap};

  int decoder_hidden = 32;
  int decoder_layers = 1;

  double log_std_min = -6.0;
  double log_std_max = 2.0;
  double prior_log_std_init = -2.302585092994046;  // log 0.1
  /// Prior mean from a learned linear map of the unit output; false selects its base coordinates.
  bool prior_mean_linear = false;
  /// Fixed std of the Gaussian observation likelihood.
  double obs_scale = 1.0;
};

/// Padded batch of equal-length sequences, one column per trajectory.
/// deltas[0] is the nominal step; deltas[i] = t_i - t_{i-1} afterwards.
struct SequenceBatch {
  std::vector<Matrix> obs;       // per step: obs_dim x batch
  std::vector<Matrix> clean;     // per step: obs_dim x batch (may be empty)
  std::vector<Matrix> controls;  // per step: control_dim x batch
  std::vector<std::vector<double>> deltas;
  std::vector<std::vector<double>> times;

  std::size_t steps() const { return obs.size(); }
  Eigen::Index batch() const { return obs.empty() ? 0 : obs.front().cols(); }
};

struct LossOptions {
  double beta = 0.1;
  double lambda = 1.0;
  RegMetric metric = RegMetric::Euclidean;
  bool reg_augmented = false;
  /// Feed the posterior mean (not a sample) into the prior transition.
  bool prior_on_mean = true;
};

struct LossVars {
  ad::Var total;
  ad::Var recon;
  ad::Var kl;
  ad::Var reg;
};

/// Deterministic predictions for a batch: posterior means drive the unit inside the
/// window, prior means are rolled out beyond it.
struct Prediction {
  std::vector<Matrix> post_mean, post_std;    // window steps
  std::vector<Matrix> prior_mean, prior_std;  // window steps (step 0 is N(0, I))
  std::vector<Matrix> recon;                  // window steps
  std::vector<Matrix> extrap;                 // horizon steps
  std::vector<Matrix> extrap_latent;          // horizon steps
};

class PhySSMModel {
 public:
  PhySSMModel(const ModelConfig& config, std::uint64_t seed);
  PhySSMModel(PhySSMModel&&) = default;
  PhySSMModel& operator=(PhySSMModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const DynamicsSpec& spec() const { return *spec_; }
  ad::ParameterStore& params() { return *store_; }
  const ad::ParameterStore& params() const { return *store_; }
  int latent_dim() const { return spec_->state_dim; }
  int augmented_dim() const { return spec_->augmented_dim; }
  const UnknownDynamicsLearner& learner() const { return learner_; }

  // ---- building blocks (batched, differentiable)
  struct EncoderState {
    SSMStack::State stack;
  };
  struct PriorState {
    UnknownDynamicsLearner::State learner;
    SSMStack::State data_driven;
  };
  struct Gaussian {
    ad::Var mean;
    ad::Var log_std;
  };

  EncoderState encoder_initial(ad::Tape& tape, Eigen::Index batch) const;
  Gaussian encoder_step(ad::Tape& tape, EncoderState& state, const ad::Var& x,
                        std::span<const double> deltas) const;

  PriorState prior_initial(ad::Tape& tape, Eigen::Index batch) const;
  /// Next-step prior from the previous latent sample; also returns the advanced augmented state.
  Gaussian prior_step(ad::Tape& tape, PriorState& state, const ad::Var& z_prev, const ad::Var& u,
                      std::span<const double> deltas, ad::Var* zbar_next = nullptr) const;

  ad::Var decode(ad::Tape& tape, const ad::Var& z) const;

  /// Negative ELBO plus regularizer over the first `window` steps of the batch.
  LossVars loss(ad::Tape& tape, const SequenceBatch& batch, std::size_t window,
                const LossOptions& options, std::mt19937_64& rng) const;

  /// Interpolation over `window` steps, extrapolation over the remaining `horizon`.
  Prediction predict(const SequenceBatch& batch, std::size_t window, std::size_t horizon) const;

 private:
  ModelConfig config_;
  std::unique_ptr<DynamicsSpec> spec_;
  std::unique_ptr<ad::ParameterStore> store_;

  nn::Mlp prenet_;
  SSMStack encoder_;
  nn::Linear encoder_head_;
  UnknownDynamicsLearner learner_;
  SSMStack data_driven_;
  nn::Linear data_driven_head_;
  nn::Linear prior_head_;
  nn::Mlp decoder_;
};

/// Width of the data-driven transition that brings the ablation model within 5% of
/// the physics model's parameter count.
int matched_data_driven_width(const ModelConfig& physics_config);

// ---- single-sequence operations

GaussianSeq encode_posterior(const PhySSMModel& model, const std::vector<Vector>& observations,
                             const std::vector<double>& deltas);

/// mean + std * eps, eps ~ N(0, I) drawn from `seed`.
std::vector<Vector> reparameterize(const GaussianSeq& g, std::uint64_t seed);

/// Holds the transition memory of one sequence across prior_predict calls.
class PriorPredictor {
 public:
  explicit PriorPredictor(const PhySSMModel& model);
  /// (mean, std) of z at the next step.
  std::pair<Vector, Vector> step(const Vector& z_prev, const Vector& u, double delta);

 private:
  const PhySSMModel* model_;
  std::unique_ptr<ad::Tape> tape_;
  PhySSMModel::PriorState state_;
};

std::vector<Vector> decode(const PhySSMModel& model, const std::vector<Vector>& z);

struct FullForward {
  GaussianSeq posterior;
  GaussianSeq prior;
  std::vector<Vector> recon;
  std::vector<Vector> extrap;
};

/// Single-trajectory wrapper over PhySSMModel::predict.
FullForward forward_full(const PhySSMModel& model, const Trajectory& trajectory, double nominal_dt,
                         std::size_t window, std::size_t horizon);

/// Builds a batch from the first `length` points of each trajectory.
SequenceBatch make_batch(const std::vector<const Trajectory*>& trajectories, std::size_t length,
                         double nominal_dt,
                         const std::vector<const std::vector<Vector>*>& clean = {});

/// Deltas rounded to 1e-9 so equal gaps share discretization cache entries.
double quantize_delta(double delta);

}  // namespace physssm
