#pragma once

// Continuous-time structured SSM layers: HiPPO-LegS initialization,
// bilinear discretization at a per-step delta, and the sequential recurrence.

#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "physssm/autodiff.hpp"
#include "physssm/nn.hpp"

namespace physssm {

/// HiPPO-LegS: -sqrt(2i+1) sqrt(2k+1) below the diagonal, -(i+1) on it, 0 above.
Matrix init_hippo(int n);

struct Discretized {
  Matrix A_bar;
  Matrix B_bar;
};

/// A_bar = (I - d/2 A)^-1 (I + d/2 A), B_bar = (I - d/2 A)^-1 d B.
/// Throws DiscretizationSingular when (I - d/2 A) is numerically singular.
Discretized discretize_bilinear(const Matrix& A, const Matrix& B, double delta);

/// Continuous parameters of one layer. The feedthrough D is fixed at zero.
struct SSMLayerParams {
  Matrix A;
  Matrix B;
  Matrix C;

  Eigen::Index state_size() const { return A.rows(); }
  Eigen::Index input_size() const { return B.cols(); }
  Eigen::Index output_size() const { return C.rows(); }
  void validate() const;
};

/// h = A_bar h_prev + B_bar u, y = C h.
std::pair<Vector, Vector> ssm_layer_step(const SSMLayerParams& params, const Vector& h_prev,
                                         const Vector& u, double delta);

enum class DeltaMode {
  RawGap,        // delta = observation gap
  LearnedScale,  // delta = gap * exp(s), one learned s per layer
};

std::string to_string(DeltaMode mode);
DeltaMode delta_mode_from_string(const std::string& s);

struct SSMStackConfig {
  int input_dim = 1;
  int width = 16;       // hidden width H
  int state_size = 16;  // N per layer
  int layers = 1;
  DeltaMode delta_mode = DeltaMode::RawGap;
};

/// Per-pass cache of (A_bar, B_bar) keyed by the exact delta value.
struct DiscretizationCache {
  struct Entry {
    double delta = 0.0;
    Matrix P_inv;  // (I - d/2 A)^-1
    Matrix Q;      // I + d/2 A
    Matrix A_bar;
    Matrix B_bar;
  };
  std::map<double, std::shared_ptr<const Entry>> entries;

  std::shared_ptr<const Entry> get(const Matrix& A, const Matrix& B, double delta);
};

/// Fused differentiable layer step over a batch (one column per sample, one delta per column).
/// log_scale, when valid, multiplies every delta by exp(log_scale).
ad::Var ssm_step(const ad::Var& A, const ad::Var& B, const ad::Var& h_prev, const ad::Var& u,
                 std::span<const double> deltas, const ad::Var& log_scale,
                 DiscretizationCache& cache);

/// Input projection, then layers of: SSM recurrence, y = C h, out = x + W gelu(y) + b.
class SSMStack {
 public:
  struct Layer {
    ad::Parameter* A = nullptr;
    ad::Parameter* B = nullptr;
    ad::Parameter* C = nullptr;
    nn::Linear mix;
    ad::Parameter* log_scale = nullptr;  // LearnedScale only
  };

  struct State {
    std::vector<ad::Var> hidden;
    std::vector<DiscretizationCache> caches;
  };

  SSMStack() = default;
  SSMStack(ad::ParameterStore& store, const std::string& name, const SSMStackConfig& config,
           std::mt19937_64& rng);

  const SSMStackConfig& config() const { return config_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const nn::Linear& input_projection() const { return input_; }

  /// Zero hidden states for a batch of the given size.
  State initial_state(ad::Tape& tape, Eigen::Index batch) const;
  /// Advances every layer one step; input is (input_dim x batch), output (width x batch).
  ad::Var step(ad::Tape& tape, State& state, const ad::Var& input,
               std::span<const double> deltas) const;

  std::vector<SSMLayerParams> layer_params() const;

 private:
  SSMStackConfig config_;
  nn::Linear input_;
  std::vector<Layer> layers_;
};

/// Runs a single sequence through the stack from zero hidden state.
std::vector<Vector> run_ssm_stack(const SSMStack& stack, const std::vector<Vector>& inputs,
                                  const std::vector<double>& deltas);

}  // namespace physssm
