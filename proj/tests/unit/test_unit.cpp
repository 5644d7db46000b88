#include <doctest.h>

#include <cmath>
#include <random>

#include "physssm/dynamics.hpp"
#include "physssm/errors.hpp"
#include "physssm/nn.hpp"
#include "physssm/ssm.hpp"
#include "physssm/unit.hpp"

using namespace physssm;

namespace {

LearnerConfig small_stack() {
  LearnerConfig c;
  c.stack_A = {0, 8, 8, 1, DeltaMode::RawGap};
  c.stack_B = {0, 8, 8, 1, DeltaMode::RawGap};
  return c;
}

LearnerConfig constant_learner() {
  LearnerConfig c;
  c.kind = LearnerKind::Constant;
  return c;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

/// Pendulum one-step error of the augmented linear form against RK4 on (theta, omega).
double pendulum_step_error(double delta) {
  const DynamicsSpec spec = build_pendulum_spec();
  PendulumParams p;
  p.length = 1.3;
  std::mt19937_64 rng(0);
  ad::ParameterStore store;
  UnknownDynamicsLearner learner(store, "l", spec, constant_learner(), rng);
  Matrix A_unk = Matrix::Zero(4, 4);
  A_unk(1, 1) = -p.damping / p.mass;
  A_unk(1, 2) = -p.gravity / p.length;
  const Vector z0 = vec({0.9, -0.4});
  PhySSMState s = initial_unit_state(spec, learner, z0);
  const PhySSMState next =
      compose_and_step(spec, s, apply_knowledge_mask(A_unk, spec.mask_A), std::nullopt,
                       Vector::Zero(1), delta);
  const DerivativeFn f = [&](const Vector& z, const Vector&, double t) {
    return pendulum_derivative(p, z, t);
  };
  const std::vector<double> t{0.0, delta};
  const auto ref = integrate_rk4(f, z0, t, std::vector<Vector>(2, Vector()), delta / 50);
  return (next.zbar.head(2) - ref[1]).norm();
}

}  // namespace

TEST_SUITE("unit") {

TEST_CASE("learner: pendulum output is 4x4 and deterministic") {
  const DynamicsSpec spec = build_pendulum_spec();
  std::mt19937_64 rng(1);
  ad::ParameterStore store;
  UnknownDynamicsLearner learner(store, "l", spec, small_stack(), rng);
  PhySSMState s1 = initial_unit_state(spec, learner, vec({0.3, 0.1}));
  PhySSMState s2 = s1;
  const auto [A1, B1] = learn_unknown(learner, s1, vec({0.5}), 0.05);
  const auto [A2, B2] = learn_unknown(learner, s2, vec({0.5}), 0.05);
  CHECK(A1.rows() == 4);
  CHECK(A1.cols() == 4);
  REQUIRE(B1.has_value());
  CHECK(B1->rows() == 4);
  CHECK(B1->cols() == 1);
  CHECK(A1 == A2);
  CHECK(*B1 == *B2);
  CHECK(A1.allFinite());
}

TEST_CASE("learner: constant learner at zero gives finite zero matrices") {
  const DynamicsSpec spec = build_pendulum_spec();
  std::mt19937_64 rng(1);
  ad::ParameterStore store;
  UnknownDynamicsLearner learner(store, "l", spec, constant_learner(), rng);
  PhySSMState s = initial_unit_state(spec, learner, vec({0.0, 0.0}));
  const auto [A, B] = learn_unknown(learner, s, vec({0.0}), 0.05);
  CHECK(A.rows() == 4);
  CHECK(A.allFinite());
  CHECK(A.norm() == 0.0);
}

TEST_CASE("learner: wrong input shape is rejected") {
  const DynamicsSpec spec = build_pendulum_spec();
  std::mt19937_64 rng(1);
  ad::ParameterStore store;
  UnknownDynamicsLearner learner(store, "l", spec, small_stack(), rng);
  ad::Tape tape(false);
  auto st = learner.initial_state(tape, 1);
  const double d = 0.05;
  CHECK_THROWS_AS(learner.step(tape, st, tape.constant(Matrix::Zero(3, 1)),
                               tape.constant(Matrix::Zero(1, 1)), std::span<const double>(&d, 1)),
                  ShapeError);
}

TEST_CASE("mask: degenerate and pendulum masks") {
  std::mt19937_64 rng(2);
  const Matrix raw = nn::random_normal(4, 4, 1.0, rng);
  CHECK(apply_knowledge_mask(raw, Matrix::Zero(4, 4)).norm() == 0.0);
  CHECK(apply_knowledge_mask(raw, Matrix::Ones(4, 4)) == raw);
  const Matrix m = apply_knowledge_mask(raw, build_pendulum_spec().mask_A);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(m(i, j) == (i == 1 ? raw(i, j) : 0.0));
  }
  CHECK_THROWS_AS(apply_knowledge_mask(raw, Matrix::Ones(3, 4)), ShapeError);
}

TEST_CASE("compose_and_step: true pendulum coefficients track RK4 to third order") {
  const double e1 = pendulum_step_error(0.01);
  const double e2 = pendulum_step_error(0.005);
  CHECK(e1 < 1e-5);
  CHECK(e1 / e2 > 6.0);
}

TEST_CASE("compose_and_step: origin is a fixed point") {
  const DynamicsSpec spec = build_linear4_spec();
  std::mt19937_64 rng(3);
  ad::ParameterStore store;
  UnknownDynamicsLearner learner(store, "l", spec, constant_learner(), rng);
  PhySSMState s = initial_unit_state(spec, learner, Vector::Zero(4));
  const Matrix A_unk = apply_knowledge_mask(nn::random_normal(4, 4, 1.0, rng), spec.mask_A);
  const PhySSMState next = compose_and_step(spec, s, A_unk, std::nullopt, Vector(), 0.1);
  CHECK(next.zbar.norm() == 0.0);
}

TEST_CASE("compose_and_step: SIR with column-sum-zero unknowns conserves the population") {
  const DynamicsSpec spec = build_sir_spec(1.0);
  std::mt19937_64 rng(4);
  ad::ParameterStore store;
  LearnerConfig lc = constant_learner();
  UnknownDynamicsLearner learner(store, "l", spec, lc, rng);
  const double beta = 0.35, gamma = 0.12;
  Matrix A_unk = Matrix::Zero(3, 3);
  A_unk(0, 0) = beta;   // times -I/N
  A_unk(1, 0) = beta;   // times +I/N
  A_unk(1, 1) = -gamma;
  A_unk(2, 1) = gamma;
  A_unk = apply_knowledge_mask(A_unk, spec.mask_A);
  PhySSMState s = initial_unit_state(spec, learner, vec({0.95, 0.05, 0.0}));
  for (int i = 0; i < 100; ++i) {
    s = compose_and_step(spec, s, A_unk, std::nullopt, Vector(), 1.0);
    CHECK(std::abs(s.zbar.sum() - 1.0) < 1e-12);
  }
  CHECK(s.zbar(2) > 0.1);
}

TEST_CASE("rollout: empty, two steps, and constant matrices") {
  const DynamicsSpec spec = build_linear4_spec();
  std::mt19937_64 rng(5);
  ad::ParameterStore store;
  UnknownDynamicsLearner learner(store, "l", spec, constant_learner(), rng);
  Matrix A_unk = Matrix::Zero(4, 4);
  A_unk(1, 1) = -0.3;
  A_unk(3, 3) = -0.4;
  Vector flat(16);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) flat(i * 4 + j) = A_unk(i, j);
  }
  learner.constant_A()->value = flat;

  const Vector z0 = vec({1.0, -0.5, 0.25, 2.0});
  CHECK(rollout(spec, learner, z0, {}, {}).empty());

  const std::vector<Vector> u(5, Vector());
  const std::vector<double> d(5, 0.1);
  const auto out = rollout(spec, learner, z0, u, d);
  REQUIRE(out.size() == 5);

  PhySSMState s = initial_unit_state(spec, learner, z0);
  for (int i = 0; i < 2; ++i) {
    s = compose_and_step(spec, s, apply_knowledge_mask(A_unk, spec.mask_A), std::nullopt,
                         Vector(), 0.1);
    CHECK((s.zbar - out[static_cast<std::size_t>(i)]).norm() < 1e-14);
  }

  const Matrix A = compose_state_matrix(spec, z0, apply_knowledge_mask(A_unk, spec.mask_A));
  const Matrix Abar = discretize_bilinear(A, Matrix::Zero(4, 1), 0.1).A_bar;
  Vector z = z0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    z = Abar * z;
    CHECK((z - out[i]).norm() < 1e-12);
  }
}

TEST_CASE("unit_step agrees with compose_and_step per column") {
  const DynamicsSpec spec = build_pendulum_spec();
  std::mt19937_64 rng(6);
  const Matrix zbar = nn::random_normal(4, 3, 0.5, rng);
  const Matrix A_raw = nn::random_normal(16, 3, 1.0, rng);
  const Matrix B_raw = nn::random_normal(4, 3, 1.0, rng);
  const Matrix u = nn::random_normal(1, 3, 1.0, rng);
  const std::vector<double> deltas{0.05, 0.1, 0.02};
  ad::Tape tape(false);
  const ad::Var A = mask_flat(tape.constant(A_raw), spec.mask_A);
  const ad::Var B = mask_flat(tape.constant(B_raw), spec.mask_B);
  const Matrix out =
      unit_step(spec, tape.constant(zbar), A, B, tape.constant(u), deltas).value();
  ad::ParameterStore store;
  UnknownDynamicsLearner learner(store, "l", spec, constant_learner(), rng);
  for (int j = 0; j < 3; ++j) {
    Matrix Au(4, 4), Bu(4, 1);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) Au(r, c) = A_raw(r * 4 + c, j);
      Bu(r, 0) = B_raw(r, j);
    }
    PhySSMState s;
    s.zbar = zbar.col(j);
    const PhySSMState n = compose_and_step(spec, s, apply_knowledge_mask(Au, spec.mask_A),
                                           apply_knowledge_mask(Bu, spec.mask_B), u.col(j),
                                           deltas[static_cast<std::size_t>(j)]);
    CHECK((n.zbar - out.col(j)).norm() < 1e-12);
  }
}

}  // TEST_SUITE
