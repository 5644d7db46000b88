#include <doctest.h>

#include <cmath>
#include <numbers>

#include "physssm/dynamics.hpp"
#include "physssm/errors.hpp"

using namespace physssm;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

std::vector<double> grid(int n, double dt) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = i * dt;
  return t;
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("rk4: zero derivative keeps the initial state") {
  const DerivativeFn f = [](const Vector& z, const Vector&, double) { return Vector::Zero(z.size()).eval(); };
  const std::vector<double> t{0.0, 0.3, 1.7, 2.0};
  const std::vector<Vector> u(t.size(), Vector());
  const auto out = integrate_rk4(f, vec({1.0, 2.0}), t, u, 0.1);
  REQUIRE(out.size() == t.size());
  for (const auto& z : out) CHECK((z - vec({1.0, 2.0})).norm() == 0.0);
}

TEST_CASE("rk4: exponential growth matches the closed form") {
  const DerivativeFn f = [](const Vector& z, const Vector&, double) { return z; };
  const std::vector<double> t{0.0, 1.0};
  const std::vector<Vector> u(2, Vector());
  const auto out = integrate_rk4(f, vec({1.0}), t, u, 0.01);
  CHECK(std::abs(out[1](0) - std::exp(1.0)) < 1e-6);
}

TEST_CASE("rk4: undamped pendulum conserves energy") {
  PendulumParams p;
  p.damping = 0.0;
  const DerivativeFn f = [&](const Vector& z, const Vector&, double t) {
    return pendulum_derivative(p, z, t);
  };
  const auto t = grid(300, 0.05);
  const std::vector<Vector> u(t.size(), Vector());
  const Vector z0 = vec({1.2, 0.3});
  const auto out = integrate_rk4(f, z0, t, u, 0.05 / 20);
  const double e0 = pendulum_energy(p, z0);
  double drift = 0.0;
  for (const auto& z : out) drift = std::max(drift, std::abs(pendulum_energy(p, z) - e0) / e0);
  CHECK(drift < 1e-6);
}

TEST_CASE("rk4: rejects mismatched controls and non-increasing times") {
  const DerivativeFn f = [](const Vector& z, const Vector&, double) { return z; };
  const std::vector<double> t{0.0, 1.0};
  CHECK_THROWS_AS(integrate_rk4(f, vec({1.0}), t, std::vector<Vector>(1), 0.1), ShapeError);
  const std::vector<double> bad{0.0, 0.0};
  CHECK_THROWS_AS(integrate_rk4(f, vec({1.0}), bad, std::vector<Vector>(2), 0.1), ConfigError);
}

TEST_CASE("pendulum derivative") {
  PendulumParams p;
  CHECK((pendulum_derivative(p, vec({0.0, 0.0}), 0.0)).norm() == 0.0);
  const Vector d = pendulum_derivative(p, vec({std::numbers::pi / 2, 0.0}), 0.0);
  CHECK(d(0) == 0.0);
  CHECK(d(1) == doctest::Approx(-10.0).epsilon(1e-14));
  PendulumParams forced;
  forced.damping = 0.0;
  forced.control_amplitude = 5.0;
  forced.control_frequency = 0.0;
  const Vector f = pendulum_derivative(forced, vec({0.0, 0.0}), 3.0);
  CHECK(f(0) == 0.0);
  CHECK(f(1) == doctest::Approx(5.0));
}

TEST_CASE("sir derivative") {
  SirParams p;
  CHECK(sir_derivative(p, vec({1.0, 0.0, 0.0}), 0.0).norm() == 0.0);
  const Vector d = sir_derivative(p, vec({0.9, 0.1, 0.0}), 0.0);
  // -0.3 * 0.9 * 0.1, 0.027 - 0.1 * 0.1, 0.1 * 0.1
  CHECK(d(0) == doctest::Approx(-0.027));
  CHECK(d(1) == doctest::Approx(0.017));
  CHECK(d(2) == doctest::Approx(0.01));
  CHECK(std::abs(d.sum()) < 1e-15);
}

TEST_CASE("generate_dataset: pendulum grid and determinism") {
  ParamSampler s;
  const auto a = generate_dataset("pendulum", 3, 300, 0.05, s, 11);
  const auto b = generate_dataset("pendulum", 3, 300, 0.05, s, 11);
  REQUIRE(a.trajectories.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& tr = a.trajectories[k];
    REQUIRE(tr.size() == 300);
    for (std::size_t i = 0; i < tr.size(); ++i) {
      CHECK(tr.times[i] == doctest::Approx(0.05 * static_cast<double>(i)).epsilon(1e-12));
      CHECK(tr.observations[i] == b.trajectories[k].observations[i]);
      CHECK(tr.states[i] == b.trajectories[k].states[i]);
    }
    CHECK(tr.observations[5].size() == 3);
    CHECK(tr.observations[5](0) == doctest::Approx(std::sin(tr.states[5](0))));
    CHECK(tr.observations[5](1) == doctest::Approx(std::cos(tr.states[5](0))));
  }
}

TEST_CASE("generate_dataset: SIR with constant rates is monotone") {
  ParamSampler s;
  const auto set = generate_dataset("sir", 4, 120, 1.0, s, 3);
  for (const auto& tr : set.trajectories) {
    for (std::size_t i = 1; i < tr.size(); ++i) {
      CHECK(tr.states[i](0) <= tr.states[i - 1](0) + 1e-12);
      CHECK(tr.states[i](2) >= tr.states[i - 1](2) - 1e-12);
    }
  }
}

TEST_CASE("corrupt: identity when clean") {
  const auto set = generate_dataset("pendulum", 2, 50, 0.05, ParamSampler{}, 1);
  const auto out = corrupt(set, 0.0, 0.0, 9);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& a = set.trajectories[k];
    const auto& b = out.trajectories[k];
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(b.times[i] == a.times[i]);
      CHECK(b.observations[i] == a.observations[i]);
    }
  }
}

TEST_CASE("corrupt: drop rate 0.2 keeps 240 of 300 points") {
  CHECK(retained_count(300, 0.2) == 240);
  const auto set = generate_dataset("pendulum", 3, 300, 0.05, ParamSampler{}, 1);
  const auto out = corrupt(set, 0.3, 0.2, 5);
  for (const auto& tr : out.trajectories) {
    CHECK(tr.size() == 240);
    CHECK(tr.retained_indices.front() == 0);
    for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr.times[i] > tr.times[i - 1]);
  }
}

TEST_CASE("corrupt: noise has the requested standard deviation") {
  // 10^5 residual samples: 3 dims x 100 points x 334 trajectories.
  const auto set = generate_dataset("pendulum", 334, 100, 0.05, ParamSampler{}, 2);
  const double sigma = 0.3;
  const auto out = corrupt(set, sigma, 0.0, 4);
  double s2 = 0.0;
  std::size_t n = 0;
  for (const auto& tr : out.trajectories) {
    for (std::size_t i = 0; i < tr.size(); ++i) {
      s2 += (tr.observations[i] - tr.clean_observations[i]).squaredNorm();
      n += static_cast<std::size_t>(tr.observations[i].size());
    }
  }
  REQUIRE(n >= 100000);
  CHECK(std::abs(std::sqrt(s2 / static_cast<double>(n)) - sigma) < 0.02 * sigma);
}

TEST_CASE("pendulum spec structure") {
  const DynamicsSpec s = build_pendulum_spec();
  CHECK(s.state_dim == 2);
  CHECK(s.augmented_dim == 4);
  const Vector zbar = s.augment(vec({0.4, 2.0}));
  CHECK(zbar(2) == doctest::Approx(std::sin(0.4)));
  CHECK(zbar(3) == doctest::Approx(std::cos(0.4)));
  const Matrix K = s.known_matrix(zbar, 0.0);
  CHECK((K.row(2) - vec({0, 0, 0, 2}).transpose()).norm() == 0.0);
  CHECK((K.row(3) - vec({0, 0, -2, 0}).transpose()).norm() == 0.0);
  CHECK(K(0, 1) == 1.0);
  CHECK(s.mask_A.row(0).norm() == 0.0);
  CHECK(s.mask_A.row(1) == Matrix::Ones(1, 4));
  CHECK(s.mask_B.rows() == 4);
  CHECK(s.mask_B(1, 0) == 1.0);
  CHECK(s.mask_B.sum() == 1.0);
}

TEST_CASE("sir spec structure") {
  const DynamicsSpec s = build_sir_spec(1.0);
  CHECK(s.mask_A(0, 1) == 0.0);
  CHECK(s.mask_A(2, 1) == 1.0);
  CHECK(s.mask_A(0, 0) == 1.0);
  CHECK(s.mask_A(1, 0) == 1.0);
  CHECK(s.mask_A(1, 1) == 1.0);
  CHECK(s.mask_A(1, 2) == 1.0);
  CHECK(s.mask_A.sum() == 5.0);
  // The known factor -I/N (and +I/N) on column 0 vanishes with I = 0.
  const Matrix F = s.factor_A.evaluate(vec({0.8, 0.0, 0.2}));
  CHECK(F(0, 0) == 0.0);
  CHECK(F(1, 0) == 0.0);
  const Matrix F2 = s.factor_A.evaluate(vec({0.8, 0.1, 0.1}));
  CHECK(F2(0, 0) == doctest::Approx(-0.1));
  CHECK(F2(1, 0) == doctest::Approx(0.1));
}

TEST_CASE("linear4 spec splits the matrix into known and unknown parts") {
  const DynamicsSpec s = build_linear4_spec();
  const Matrix K = s.known_matrix(Vector::Zero(4), 0.0);
  const Matrix full = linear4_matrix();
  CHECK((K + full.cwiseProduct(linear4_mask()) - full).norm() == 0.0);
  CHECK(K.cwiseProduct(linear4_mask()).norm() == 0.0);
  CHECK_THROWS_AS(build_spec("nope"), ConfigError);
}

}  // TEST_SUITE
