#include "physssm/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "physssm/errors.hpp"

namespace physssm {

// ---------------------------------------------------------------- systems

void PendulumParams::validate() const {
  if (!(mass > 0) || !(gravity > 0) || !(length > 0) || !(damping >= 0)) {
    throw ConfigError("pendulum parameters need mass, gravity, length > 0 and damping >= 0");
  }
}

double PendulumParams::control(double t) const {
  return control_amplitude * std::cos(2.0 * std::numbers::pi * control_frequency * t);
}

double RateProfile::at(double t) const {
  if (values.empty() || values.size() != knot_times.size()) {
    throw ConfigError("rate profile needs matching, non-empty knots and values");
  }
  if (values.size() == 1 || t <= knot_times.front()) return values.front();
  if (t >= knot_times.back()) return values.back();
  auto it = std::upper_bound(knot_times.begin(), knot_times.end(), t);
  const auto k = static_cast<std::size_t>(it - knot_times.begin());
  const double w = (t - knot_times[k - 1]) / (knot_times[k] - knot_times[k - 1]);
  return (1.0 - w) * values[k - 1] + w * values[k];
}

void SirParams::validate() const {
  if (!(contact_rate >= 0) || !(removal_rate >= 0) || !(population > 0)) {
    throw ConfigError("SIR parameters need contact_rate, removal_rate >= 0 and population > 0");
  }
}

double SirParams::beta(double t) const {
  return contact_profile ? contact_profile->at(t) : contact_rate;
}

double SirParams::gamma(double t) const {
  return removal_profile ? removal_profile->at(t) : removal_rate;
}

Vector pendulum_derivative(const PendulumParams& p, const Vector& state, double t) {
  const double theta = state(0);
  const double omega = state(1);
  Vector d(2);
  d(0) = omega;
  d(1) = -(p.gravity / p.length) * std::sin(theta) - (p.damping / p.mass) * omega +
         p.control(t) / (p.mass * p.length * p.length);
  return d;
}

Vector sir_derivative(const SirParams& p, const Vector& state, double t) {
  const double s = state(0), i = state(1);
  const double infection = p.beta(t) * s * i / p.population;
  const double removal = p.gamma(t) * i;
  Vector d(3);
  d << -infection, infection - removal, removal;
  return d;
}

double pendulum_energy(const PendulumParams& p, const Vector& state) {
  const double l = p.length;
  return 0.5 * p.mass * l * l * state(1) * state(1) +
         p.mass * p.gravity * l * (1.0 - std::cos(state(0)));
}

// ---------------------------------------------------------------- integration

std::vector<Vector> integrate_rk4(const DerivativeFn& derivative, const Vector& z0,
                                  std::span<const double> times, std::span<const Vector> controls,
                                  double max_substep) {
  if (times.empty()) return {};
  if (controls.size() != times.size()) throw ShapeError("integrate_rk4: one control per timestamp");
  if (!(max_substep > 0)) throw ConfigError("integrate_rk4: max_substep must be positive");

  auto eval = [&](const Vector& z, const Vector& u, double t) {
    Vector d = derivative(z, u, t);
    if (!d.allFinite()) throw IntegrationDiverged(t, "non-finite derivative");
    return d;
  };

  std::vector<Vector> out;
  out.reserve(times.size());
  Vector z = z0;
  out.push_back(z);
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    const double span = times[i + 1] - times[i];
    if (!(span > 0)) throw ConfigError("integrate_rk4: times must be strictly increasing");
    const int substeps = std::max(1, static_cast<int>(std::ceil(span / max_substep - 1e-12)));
    const double h = span / substeps;
    const Vector& u = controls[i];
    for (int k = 0; k < substeps; ++k) {
      const double t = times[i] + k * h;
      const Vector k1 = eval(z, u, t);
      const Vector k2 = eval(z + 0.5 * h * k1, u, t + 0.5 * h);
      const Vector k3 = eval(z + 0.5 * h * k2, u, t + 0.5 * h);
      const Vector k4 = eval(z + h * k3, u, t + h);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!z.allFinite()) throw IntegrationDiverged(times[i + 1], "non-finite state");
    out.push_back(z);
  }
  return out;
}

// ---------------------------------------------------------------- trajectories

void Trajectory::validate() const {
  const auto n = times.size();
  if (states.size() != n || observations.size() != n || controls.size() != n) {
    throw ShapeError("trajectory sequences must share one length");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!(times[i] > times[i - 1])) throw ConfigError("trajectory times must be strictly increasing");
  }
}

Normalization Normalization::identity(Eigen::Index dim) {
  return {Vector::Zero(dim), Vector::Ones(dim)};
}

Vector Normalization::apply(const Vector& x) const {
  return (x - mean).cwiseQuotient(std);
}

Vector Normalization::invert(const Vector& x) const {
  return x.cwiseProduct(std) + mean;
}

Vector emission(const std::string& system, const Vector& state, double population) {
  if (system == "pendulum") {
    Vector x(3);
    x << std::sin(state(0)), std::cos(state(0)), state(1);
    return x;
  }
  if (system == "sir") return state / population;
  if (system.rfind("linear", 0) == 0) return state;
  throw ConfigError("unknown system: " + system);
}

namespace {

double draw(std::mt19937_64& rng, const UniformRange& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Trajectory simulate_pendulum(const PendulumSampler& s, std::mt19937_64& rng,
                             const std::vector<double>& times, double max_substep) {
  PendulumParams p;
  p.mass = s.mass;
  p.gravity = s.gravity;
  p.damping = s.damping;
  p.control_frequency = s.control_frequency;
  p.length = draw(rng, s.length);
  p.control_amplitude = draw(rng, s.amplitude);
  Vector z0(2);
  z0(0) = draw(rng, s.theta0);
  z0(1) = draw(rng, s.omega0);
  p.validate();

  Trajectory tr;
  tr.times = times;
  for (double t : times) tr.controls.push_back(Vector::Constant(1, p.control(t)));
  tr.states = integrate_rk4(
      [&p](const Vector& z, const Vector&, double t) { return pendulum_derivative(p, z, t); }, z0,
      tr.times, tr.controls, max_substep);
  for (const auto& z : tr.states) tr.observations.push_back(emission("pendulum", z));
  return tr;
}

RateProfile sample_profile(std::mt19937_64& rng, double base, int knots, double spread,
                           double t_end) {
  if (knots <= 0) return RateProfile::constant(base);
  RateProfile prof;
  for (int k = 0; k < knots; ++k) {
    prof.knot_times.push_back(knots == 1 ? 0.0 : t_end * k / (knots - 1));
    const double jitter = std::uniform_real_distribution<double>(-spread, spread)(rng);
    prof.values.push_back(std::max(0.0, base * (1.0 + jitter)));
  }
  return prof;
}

Trajectory simulate_sir(const SirSampler& s, std::mt19937_64& rng, const std::vector<double>& times,
                        double max_substep) {
  SirParams p;
  p.population = s.population;
  p.contact_rate = draw(rng, s.contact_rate);
  p.removal_rate = draw(rng, s.removal_rate);
  if (s.profile_knots > 0) {
    p.contact_profile = sample_profile(rng, p.contact_rate, s.profile_knots, s.profile_spread,
                                       times.back());
    p.removal_profile = sample_profile(rng, p.removal_rate, s.profile_knots, s.profile_spread,
                                       times.back());
  }
  p.validate();
  const double i0 = draw(rng, s.infected0) * p.population;
  Vector z0(3);
  z0 << p.population - i0, i0, 0.0;

  Trajectory tr;
  tr.times = times;
  tr.controls.assign(times.size(), Vector(0));
  tr.states = integrate_rk4(
      [&p](const Vector& z, const Vector&, double t) { return sir_derivative(p, z, t); }, z0,
      tr.times, tr.controls, max_substep);
  for (const auto& z : tr.states) tr.observations.push_back(emission("sir", z, p.population));
  return tr;
}

}  // namespace

TrajectorySet generate_dataset(const std::string& system, int n_trajectories, int horizon, double dt,
                               const ParamSampler& sampler, std::uint64_t seed,
                               double max_substep) {
  if (system != "pendulum" && system != "sir") throw ConfigError("unknown system: " + system);
  if (horizon < 2) throw ConfigError("horizon must be at least 2");
  if (!(dt > 0)) throw ConfigError("dt must be positive");
  if (n_trajectories < 0) throw ConfigError("trajectory count must be non-negative");
  if (max_substep <= 0) max_substep = dt / 10.0;

  std::vector<double> times(static_cast<std::size_t>(horizon));
  for (int i = 0; i < horizon; ++i) times[static_cast<std::size_t>(i)] = i * dt;

  TrajectorySet set;
  set.system = system;
  set.dt = dt;
  set.trajectories.resize(static_cast<std::size_t>(n_trajectories));
  for (int k = 0; k < n_trajectories; ++k) {
    auto rng = stream(seed, static_cast<std::uint64_t>(k));
    set.trajectories[static_cast<std::size_t>(k)] =
        system == "pendulum" ? simulate_pendulum(sampler.pendulum, rng, times, max_substep)
                             : simulate_sir(sampler.sir, rng, times, max_substep);
  }
  return set;
}

Normalization fit_normalization(const TrajectorySet& set) {
  if (set.trajectories.empty() || set.trajectories.front().observations.empty()) {
    throw ConfigError("cannot fit normalization on an empty set");
  }
  const auto dim = set.trajectories.front().observations.front().size();
  Vector sum = Vector::Zero(dim), sq = Vector::Zero(dim);
  double n = 0;
  for (const auto& tr : set.trajectories) {
    for (const auto& x : tr.observations) {
      sum += x;
      sq += x.cwiseProduct(x);
      n += 1;
    }
  }
  Normalization norm;
  norm.mean = sum / n;
  Vector var = sq / n - norm.mean.cwiseProduct(norm.mean);
  norm.std = var.cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index d = 0; d < dim; ++d) {
    if (norm.std(d) < 1e-12) norm.std(d) = 1.0;
  }
  return norm;
}

void apply_normalization(TrajectorySet& set, const Normalization& norm) {
  for (auto& tr : set.trajectories) {
    for (auto& x : tr.observations) x = norm.apply(x);
  }
}

std::size_t retained_count(std::size_t length, double drop_rate) {
  return static_cast<std::size_t>(std::llround((1.0 - drop_rate) * static_cast<double>(length)));
}

IrregularSet corrupt(const TrajectorySet& set, double noise_sigma, double drop_rate,
                     std::uint64_t seed) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ConfigError("drop rate must lie in [0, 1)");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");

  IrregularSet out;
  out.system = set.system;
  out.dt = set.dt;
  out.trajectories.reserve(set.trajectories.size());
  for (std::size_t k = 0; k < set.trajectories.size(); ++k) {
    const Trajectory& src = set.trajectories[k];
    src.validate();
    const std::size_t n = src.size();
    const std::size_t keep = std::min(n, retained_count(n, drop_rate));
    if (keep < 2) {
      throw ConfigError("drop rate " + std::to_string(drop_rate) + " leaves fewer than 2 points");
    }
    auto rng = stream(seed, k);

    // Index 0 always survives; the dropped subset is uniform over indices 1..n-1.
    std::vector<std::size_t> interior(n - 1);
    std::iota(interior.begin(), interior.end(), std::size_t{1});
    std::shuffle(interior.begin(), interior.end(), rng);
    std::vector<std::size_t> retained(interior.begin(),
                                      interior.begin() + static_cast<std::ptrdiff_t>(keep - 1));
    retained.push_back(0);
    std::sort(retained.begin(), retained.end());

    IrregularTrajectory tr;
    tr.noise_sigma = noise_sigma;
    tr.drop_rate = drop_rate;
    tr.seed = seed;
    tr.retained_indices = retained;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t idx : retained) {
      tr.times.push_back(src.times[idx]);
      tr.states.push_back(src.states[idx]);
      tr.controls.push_back(src.controls[idx]);
      tr.clean_observations.push_back(src.observations[idx]);
      Vector x = src.observations[idx];
      if (noise_sigma > 0) {
        for (Eigen::Index d = 0; d < x.size(); ++d) x(d) += noise_sigma * gauss(rng);
      }
      tr.observations.push_back(std::move(x));
    }
    out.trajectories.push_back(std::move(tr));
  }
  return out;
}

// ---------------------------------------------------------------- partial knowledge

AffineMatrixField AffineMatrixField::zeros(Eigen::Index rows, Eigen::Index cols) {
  return {Matrix::Zero(rows, cols), {}};
}

AffineMatrixField AffineMatrixField::ones(Eigen::Index rows, Eigen::Index cols) {
  return {Matrix::Ones(rows, cols), {}};
}

Matrix AffineMatrixField::evaluate(const Vector& zbar) const {
  Matrix m = constant;
  for (std::size_t k = 0; k < linear.size(); ++k) {
    if (zbar(static_cast<Eigen::Index>(k)) != 0.0) m += zbar(static_cast<Eigen::Index>(k)) * linear[k];
  }
  return m;
}

bool AffineMatrixField::entry_is_constant(Eigen::Index i, Eigen::Index j) const {
  return std::all_of(linear.begin(), linear.end(), [&](const Matrix& l) { return l(i, j) == 0.0; });
}

bool AffineMatrixField::entry_is_zero(Eigen::Index i, Eigen::Index j) const {
  return constant(i, j) == 0.0 && entry_is_constant(i, j);
}

Matrix DynamicsSpec::known_matrix(const Vector& zbar, double /*t*/) const {
  return known_A.evaluate(zbar);
}

void DynamicsSpec::check_invariants() const {
  const Eigen::Index d = augmented_dim;
  auto binary = [](const Matrix& m) {
    return (m.array() == 0.0 || m.array() == 1.0).all();
  };
  if (mask_A.rows() != d || mask_A.cols() != d) throw InvariantViolation(name + ": mask_A shape");
  if (mask_B.rows() != d || mask_B.cols() != control_dim) {
    throw InvariantViolation(name + ": mask_B shape");
  }
  if (!binary(mask_A) || !binary(mask_B)) throw InvariantViolation(name + ": masks must be binary");
  if (known_A.constant.rows() != d || known_A.constant.cols() != d) {
    throw InvariantViolation(name + ": known matrix shape");
  }
  if (!known_A.linear.empty() && static_cast<Eigen::Index>(known_A.linear.size()) != d) {
    throw InvariantViolation(name + ": known matrix needs one linear term per coordinate");
  }
  if (factor_A.constant.rows() != d || factor_A.constant.cols() != d) {
    throw InvariantViolation(name + ": factor matrix shape");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (mask_A(i, j) == 1.0 && !known_A.entry_is_zero(i, j)) {
        throw InvariantViolation(name + ": mask_A and the known matrix overlap at (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  if (known_B.size() != 0) {
    for (Eigen::Index i = 0; i < mask_B.rows(); ++i) {
      for (Eigen::Index j = 0; j < mask_B.cols(); ++j) {
        if (mask_B(i, j) == 1.0 && known_B(i, j) != 0.0) {
          throw InvariantViolation(name + ": mask_B and known_B overlap");
        }
      }
    }
  }
}

DynamicsSpec build_pendulum_spec() {
  DynamicsSpec s;
  s.name = "pendulum";
  s.state_dim = 2;
  s.augmented_dim = 4;
  s.control_dim = 1;
  s.augment = [](const Vector& z) {
    Vector a(4);
    a << z(0), z(1), std::sin(z(0)), std::cos(z(0));
    return a;
  };
  s.augment_jacobian = [](const Vector& z) {
    Matrix j = Matrix::Zero(4, 2);
    j(0, 0) = 1.0;
    j(1, 1) = 1.0;
    j(2, 0) = std::cos(z(0));
    j(3, 0) = -std::sin(z(0));
    return j;
  };
  // Row 0: theta' = omega. Rows 2, 3: s' = omega c, c' = -omega s.
  s.known_A = AffineMatrixField::zeros(4, 4);
  s.known_A.constant(0, 1) = 1.0;
  s.known_A.linear.assign(4, Matrix::Zero(4, 4));
  s.known_A.linear[1](2, 3) = 1.0;
  s.known_A.linear[1](3, 2) = -1.0;
  s.known_B = Matrix::Zero(4, 1);
  s.mask_A = Matrix::Zero(4, 4);
  s.mask_A.row(1).setOnes();
  s.mask_B = Matrix::Zero(4, 1);
  s.mask_B(1, 0) = 1.0;
  s.factor_A = AffineMatrixField::ones(4, 4);
  s.check_invariants();
  return s;
}

DynamicsSpec build_sir_spec(double population) {
  if (!(population > 0)) throw ConfigError("population must be positive");
  DynamicsSpec s;
  s.name = "sir";
  s.state_dim = 3;
  s.augmented_dim = 3;
  s.control_dim = 0;
  s.augment = [](const Vector& z) { return z; };
  s.augment_jacobian = [](const Vector&) { return Matrix::Identity(3, 3); };
  s.known_A = AffineMatrixField::zeros(3, 3);
  s.known_B = Matrix::Zero(3, 0);
  s.mask_A = Matrix::Zero(3, 3);
  s.mask_A(0, 0) = 1.0;
  s.mask_A(1, 0) = 1.0;
  s.mask_A(1, 1) = 1.0;
  s.mask_A(1, 2) = 1.0;
  s.mask_A(2, 1) = 1.0;
  s.mask_B = Matrix::Zero(3, 0);
  // Column 0 carries the contact term: learned rate times -+I/N.
  s.factor_A = AffineMatrixField::ones(3, 3);
  s.factor_A.constant(0, 0) = 0.0;
  s.factor_A.constant(1, 0) = 0.0;
  s.factor_A.linear.assign(3, Matrix::Zero(3, 3));
  s.factor_A.linear[1](0, 0) = -1.0 / population;
  s.factor_A.linear[1](1, 0) = 1.0 / population;
  s.check_invariants();
  return s;
}

DynamicsSpec build_linear_spec(const std::string& name, const Matrix& known_A, const Matrix& mask_A,
                               int control_dim) {
  const auto d = known_A.rows();
  if (known_A.cols() != d || mask_A.rows() != d || mask_A.cols() != d) {
    throw ShapeError("linear spec: known matrix and mask must be square and equal-sized");
  }
  DynamicsSpec s;
  s.name = name;
  s.state_dim = static_cast<int>(d);
  s.augmented_dim = static_cast<int>(d);
  s.control_dim = control_dim;
  s.augment = [](const Vector& z) { return z; };
  s.augment_jacobian = [d](const Vector&) { return Matrix::Identity(d, d); };
  s.known_A = {known_A, {}};
  s.known_B = Matrix::Zero(d, control_dim);
  s.mask_A = mask_A;
  s.mask_B = Matrix::Ones(d, control_dim);
  s.factor_A = AffineMatrixField::ones(d, d);
  s.check_invariants();
  return s;
}

Matrix linear4_matrix() {
  Matrix a(4, 4);
  a << 0.0, 1.0, 0.0, 0.0,
      -1.0, -0.3, 0.5, 0.0,
       0.0, 0.0, -0.5, 1.0,
       0.2, 0.0, -1.0, -0.4;
  return a;
}

Matrix linear4_mask() {
  Matrix m = Matrix::Zero(4, 4);
  m(1, 1) = m(1, 2) = 1.0;
  m(3, 0) = m(3, 2) = m(3, 3) = 1.0;
  return m;
}

DynamicsSpec build_linear4_spec() {
  const Matrix mask = linear4_mask();
  return build_linear_spec("linear4", linear4_matrix().cwiseProduct(Matrix::Ones(4, 4) - mask),
                           mask);
}

DynamicsSpec build_spec(const std::string& system) {
  if (system == "pendulum") return build_pendulum_spec();
  if (system == "sir") return build_sir_spec();
  if (system == "linear4") return build_linear4_spec();
  throw ConfigError("unknown system: " + system);
}

}  // namespace physssm
