#pragma once

// Synthetic dynamical systems, their ground-truth integrator and the
// partial-knowledge descriptions consumed by the physics unit.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "physssm/autodiff.hpp"

namespace physssm {

// ---------------------------------------------------------------- systems

struct PendulumParams {
  double mass = 1.0;
  double gravity = 10.0;
  double damping = 0.7;
  double length = 1.0;
  double control_amplitude = 0.0;
  double control_frequency = 0.25;  // Hz

  void validate() const;
  double control(double t) const;
};

/// Piecewise-linear profile over knot times; a single knot is a constant.
struct RateProfile {
  std::vector<double> knot_times;
  std::vector<double> values;

  static RateProfile constant(double v) { return {{0.0}, {v}}; }
  double at(double t) const;
};

struct SirParams {
  double contact_rate = 0.3;
  double removal_rate = 0.1;
  double population = 1.0;
  std::optional<RateProfile> contact_profile;
  std::optional<RateProfile> removal_profile;

  void validate() const;
  double beta(double t) const;
  double gamma(double t) const;
};

/// (theta, omega) -> (omega, -(g/l) sin(theta) - (b/m) omega + A cos(2 pi alpha t) / (m l^2)).
Vector pendulum_derivative(const PendulumParams& p, const Vector& state, double t);

/// (S, I, R) -> (-beta S I / N, beta S I / N - gamma I, gamma I).
Vector sir_derivative(const SirParams& p, const Vector& state, double t);

/// Total mechanical energy 1/2 m l^2 omega^2 + m g l (1 - cos theta).
double pendulum_energy(const PendulumParams& p, const Vector& state);

// ---------------------------------------------------------------- integration

using DerivativeFn = std::function<Vector(const Vector& state, const Vector& control, double t)>;

/// Classical RK4. Control i is held over [t_i, t_{i+1}); each interval is split
/// into equal substeps no longer than max_substep.
std::vector<Vector> integrate_rk4(const DerivativeFn& derivative, const Vector& z0,
                                  std::span<const double> times, std::span<const Vector> controls,
                                  double max_substep);

// ---------------------------------------------------------------- trajectories

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> observations;
  std::vector<Vector> controls;

  std::size_t size() const { return times.size(); }
  void validate() const;
};

struct IrregularTrajectory : Trajectory {
  std::vector<std::size_t> retained_indices;
  std::vector<Vector> clean_observations;  // emission of states at the retained indices
  double noise_sigma = 0.0;
  double drop_rate = 0.0;
  std::uint64_t seed = 0;
};

/// Per-dimension affine observation normalization x' = (x - mean) / std.
struct Normalization {
  Vector mean;
  Vector std;

  static Normalization identity(Eigen::Index dim);
  Vector apply(const Vector& x) const;
  Vector invert(const Vector& x) const;
};

struct TrajectorySet {
  std::string system;
  double dt = 0.0;
  std::vector<Trajectory> trajectories;
};

struct IrregularSet {
  std::string system;
  double dt = 0.0;
  std::vector<IrregularTrajectory> trajectories;
};

struct UniformRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct PendulumSampler {
  UniformRange length{1.0, 2.0};
  UniformRange amplitude{-5.0, 5.0};
  UniformRange theta0{-1.5707963267948966, 1.5707963267948966};
  UniformRange omega0{-1.0, 1.0};
  double mass = 1.0;
  double gravity = 10.0;
  double damping = 0.7;
  double control_frequency = 0.25;
};

struct SirSampler {
  UniformRange contact_rate{0.2, 0.5};
  UniformRange removal_rate{0.05, 0.15};
  UniformRange infected0{0.01, 0.05};
  double population = 1.0;
  /// Number of piecewise-linear knots for time-varying rates; 0 keeps rates constant.
  int profile_knots = 0;
  /// Relative amplitude of knot perturbations around the sampled base rate.
  double profile_spread = 0.3;
};

struct ParamSampler {
  PendulumSampler pendulum;
  SirSampler sir;
};

/// Deterministic given seed; trajectory k draws from seed_seq{seed, k}.
TrajectorySet generate_dataset(const std::string& system, int n_trajectories, int horizon, double dt,
                               const ParamSampler& sampler, std::uint64_t seed,
                               double max_substep = 0.0);

/// Default emission of each system (pendulum: sin, cos, omega; SIR: compartments / N).
Vector emission(const std::string& system, const Vector& state, double population = 1.0);

Normalization fit_normalization(const TrajectorySet& set);
void apply_normalization(TrajectorySet& set, const Normalization& norm);

/// Gaussian observation noise plus uniform removal of interior indices (index 0 is kept).
IrregularSet corrupt(const TrajectorySet& set, double noise_sigma, double drop_rate,
                     std::uint64_t seed);

/// Number of points kept out of `length` at the given drop rate.
std::size_t retained_count(std::size_t length, double drop_rate);

// ---------------------------------------------------------------- partial knowledge

/// Matrix-valued field M(zbar) = constant + sum_k zbar_k * linear[k].
struct AffineMatrixField {
  Matrix constant;
  std::vector<Matrix> linear;  // empty, or one matrix per augmented coordinate

  static AffineMatrixField zeros(Eigen::Index rows, Eigen::Index cols);
  static AffineMatrixField ones(Eigen::Index rows, Eigen::Index cols);
  Matrix evaluate(const Vector& zbar) const;
  /// True when entry (i, j) is identically zero for every input.
  bool entry_is_zero(Eigen::Index i, Eigen::Index j) const;
  bool entry_is_constant(Eigen::Index i, Eigen::Index j) const;
};

struct DynamicsSpec {
  std::string name;
  int state_dim = 0;
  int augmented_dim = 0;
  int control_dim = 0;

  std::function<Vector(const Vector&)> augment;
  std::function<Matrix(const Vector&)> augment_jacobian;  // augmented_dim x state_dim

  AffineMatrixField known_A;
  Matrix known_B;  // constant; zero in every shipped spec
  Matrix mask_A;
  Matrix mask_B;
  /// Known multiplicative factors applied to learned entries after masking
  /// (partially known terms). Entries without a factor hold the constant 1.
  AffineMatrixField factor_A;

  Matrix known_matrix(const Vector& zbar, double t) const;
  /// Throws InvariantViolation unless masks are binary and disjoint from the known support.
  void check_invariants() const;
};

DynamicsSpec build_pendulum_spec();
DynamicsSpec build_sir_spec(double population = 1.0);
/// Identity augmentation with a constant known matrix and the given mask.
DynamicsSpec build_linear_spec(const std::string& name, const Matrix& known_A, const Matrix& mask_A,
                               int control_dim = 0);
/// 4-dim linear test system: the full matrix, its unknown-entry mask, and the
/// spec whose known part is the complement of the mask.
Matrix linear4_matrix();
Matrix linear4_mask();
DynamicsSpec build_linear4_spec();
/// "pendulum", "sir" or "linear4".
DynamicsSpec build_spec(const std::string& system);

}  // namespace physssm
