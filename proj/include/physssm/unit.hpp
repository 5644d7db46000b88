#pragma once

// The physics unit: SSM stacks estimate the unknown continuous matrices, a
// binary knowledge mask confines them to the unknown entries, the result is
// added to the known physics and discretized to advance the augmented state.

#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "physssm/autodiff.hpp"
#include "physssm/dynamics.hpp"
#include "physssm/nn.hpp"
#include "physssm/ssm.hpp"

namespace physssm {

enum class LearnerKind {
  Stack,     // structured SSM stacks followed by a fully connected head
  Constant,  // a single learned matrix, used by the decomposition-recovery experiment
};

struct LearnerConfig {
  LearnerKind kind = LearnerKind::Stack;
  SSMStackConfig stack_A;  // input_dim is set from the spec
  SSMStackConfig stack_B;
  bool learn_B = true;
  /// Fixed gain on the head outputs; keeps physically sized entries reachable.
  double output_scale = 1.0;
};

/// Raw (pre-mask) unknown matrices flattened row-major, one column per sample:
/// A is (d*d x batch), B is (d*du x batch) or invalid when not learned.
struct RawUnknown {
  ad::Var A;
  ad::Var B;
};

class UnknownDynamicsLearner {
 public:
  struct State {
    SSMStack::State stack_A;
    SSMStack::State stack_B;
  };

  UnknownDynamicsLearner() = default;
  UnknownDynamicsLearner(ad::ParameterStore& store, const std::string& name,
                         const DynamicsSpec& spec, LearnerConfig config, std::mt19937_64& rng);

  const LearnerConfig& config() const { return config_; }
  bool learns_B() const { return learns_B_; }
  int augmented_dim() const { return dim_; }
  int control_dim() const { return control_dim_; }

  State initial_state(ad::Tape& tape, Eigen::Index batch) const;
  /// Consumes (zbar, u) for this step and returns the raw unknown matrices.
  RawUnknown step(ad::Tape& tape, State& state, const ad::Var& zbar, const ad::Var& u,
                  std::span<const double> deltas) const;

  const SSMStack& stack_A() const { return stack_A_; }
  ad::Parameter* constant_A() const { return const_A_; }
  ad::Parameter* constant_B() const { return const_B_; }

 private:
  LearnerConfig config_;
  int dim_ = 0;
  int control_dim_ = 0;
  bool learns_B_ = false;
  SSMStack stack_A_;
  SSMStack stack_B_;
  nn::Linear head_A_;
  nn::Linear head_B_;
  ad::Parameter* const_A_ = nullptr;
  ad::Parameter* const_B_ = nullptr;
};

// ---------------------------------------------------------------- plain API

/// Hadamard product raw .* mask.
Matrix apply_knowledge_mask(const Matrix& raw, const Matrix& mask);

/// A(zbar) = known(zbar) + factor(zbar) .* A_unk, where A_unk is already masked.
Matrix compose_state_matrix(const DynamicsSpec& spec, const Vector& zbar, const Matrix& A_unk);

struct PhySSMState {
  Vector zbar;
  std::vector<Matrix> hidden_A;  // one (N x 1) per layer of stack A
  std::vector<Matrix> hidden_B;
  double t = 0.0;
};

/// Initial state with zero learner memory; zbar = spec.augment(z).
PhySSMState initial_unit_state(const DynamicsSpec& spec, const UnknownDynamicsLearner& learner,
                               const Vector& z, double t0 = 0.0);

/// Advances the learner memory in `state` and returns (A_unk_raw, B_unk_raw) as matrices.
std::pair<Matrix, std::optional<Matrix>> learn_unknown(const UnknownDynamicsLearner& learner,
                                                       PhySSMState& state, const Vector& u,
                                                       double delta);

/// One bilinear step of dzbar/dt = A zbar + B u with A composed from the spec and A_unk.
PhySSMState compose_and_step(const DynamicsSpec& spec, const PhySSMState& state,
                             const Matrix& A_unk, const std::optional<Matrix>& B_unk,
                             const Vector& u, double delta);

/// Autoregressive prediction: learn -> mask -> compose/step, output fed back as input.
std::vector<Vector> rollout(const DynamicsSpec& spec, const UnknownDynamicsLearner& learner,
                            const Vector& zbar_init, const std::vector<Vector>& controls,
                            const std::vector<double>& deltas);

// ---------------------------------------------------------------- differentiable ops

/// Multiplies each flattened (row-major) column by the flattened mask.
ad::Var mask_flat(const ad::Var& raw, const Matrix& mask);

/// Batched compose-and-step. A_unk / B_unk are masked, flattened row-major;
/// B_unk may be invalid (no control path).
ad::Var unit_step(const DynamicsSpec& spec, const ad::Var& zbar, const ad::Var& A_unk,
                  const ad::Var& B_unk, const ad::Var& u, std::span<const double> deltas);

/// zbar = spec.augment(z) per column.
ad::Var augment(const DynamicsSpec& spec, const ad::Var& z);

}  // namespace physssm
