#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "physssm/errors.hpp"
#include "physssm/nn.hpp"
#include "physssm/ssm.hpp"

using namespace physssm;

namespace {

Matrix random_stable(int n, std::mt19937_64& rng) {
  Matrix m = nn::random_normal(n, n, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  const double shift = m.eigenvalues().real().maxCoeff();
  std::uniform_real_distribution<double> margin(0.1, 1.0);
  return m - (shift + margin(rng)) * Matrix::Identity(n, n);
}

}  // namespace

TEST_SUITE("ssm") {

TEST_CASE("hippo closed form") {
  const Matrix a1 = init_hippo(1);
  CHECK(a1(0, 0) == -1.0);
  const Matrix a2 = init_hippo(2);
  CHECK(a2(0, 0) == -1.0);
  CHECK(a2(0, 1) == 0.0);
  CHECK(a2(1, 0) == doctest::Approx(-std::sqrt(3.0)).epsilon(1e-15));
  CHECK(a2(1, 1) == -2.0);
  CHECK_THROWS_AS(init_hippo(0), ConfigError);
}

TEST_CASE("hippo is stable up to n = 64") {
  for (int n : {1, 2, 3, 8, 16, 32, 64}) {
    CHECK(init_hippo(n).eigenvalues().real().maxCoeff() < 0.0);
  }
}

TEST_CASE("bilinear: zero dynamics") {
  const Matrix B = (Matrix(2, 1) << 1.0, -2.0).finished();
  const auto d = discretize_bilinear(Matrix::Zero(2, 2), B, 0.3);
  CHECK((d.A_bar - Matrix::Identity(2, 2)).norm() == 0.0);
  CHECK((d.B_bar - 0.3 * B).norm() < 1e-15);
}

TEST_CASE("bilinear: nilpotent matrix matches the exponential") {
  const Matrix A = (Matrix(2, 2) << 0.0, 1.0, 0.0, 0.0).finished();
  const auto d = discretize_bilinear(A, Matrix::Zero(2, 1), 0.1);
  const Matrix expected = (Matrix(2, 2) << 1.0, 0.1, 0.0, 1.0).finished();
  CHECK((d.A_bar - expected).norm() < 1e-15);
  CHECK((d.A_bar - (A * 0.1).exp()).norm() < 1e-12);
}

TEST_CASE("bilinear: third-order local error") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 6;
    const Matrix A = random_stable(n, rng);
    auto err = [&](double d) {
      return (discretize_bilinear(A, Matrix::Zero(n, 1), d).A_bar - (A * d).exp()).norm();
    };
    const double e1 = err(0.1), e2 = err(0.05), e3 = err(0.025);
    CHECK(e1 / e2 > 6.0);
    CHECK(e2 / e3 > 6.0);
    CHECK(e1 / e2 < 10.0);
  }
}

TEST_CASE("bilinear: singular pencil is reported") {
  // I - d/2 A = 0 for A = (2/d) I.
  const double d = 0.5;
  const Matrix A = (2.0 / d) * Matrix::Identity(3, 3);
  CHECK_THROWS_AS(discretize_bilinear(A, Matrix::Zero(3, 1), d), DiscretizationSingular);
}

TEST_CASE("layer step: zero state and input") {
  std::mt19937_64 rng(1);
  SSMLayerParams p{init_hippo(4), nn::random_normal(4, 2, 1.0, rng), nn::random_normal(3, 4, 1.0, rng)};
  const auto [h, y] = ssm_layer_step(p, Vector::Zero(4), Vector::Zero(2), 0.1);
  CHECK(h.norm() == 0.0);
  CHECK(y.norm() == 0.0);
}

TEST_CASE("layer step: integrator passes the input through") {
  SSMLayerParams p{Matrix::Zero(3, 3), Matrix::Identity(3, 3), Matrix::Identity(3, 3)};
  const Vector v = (Vector(3) << 0.5, -1.0, 2.0).finished();
  const auto [h, y] = ssm_layer_step(p, Vector::Zero(3), v, 1.0);
  CHECK((y - v).norm() < 1e-15);
}

TEST_CASE("layer step: two steps equal a dense unrolling") {
  std::mt19937_64 rng(2);
  SSMLayerParams p{init_hippo(5), nn::random_normal(5, 2, 1.0, rng), nn::random_normal(2, 5, 1.0, rng)};
  const Vector h0 = nn::random_normal(5, 1, 1.0, rng);
  const Vector u1 = nn::random_normal(2, 1, 1.0, rng), u2 = nn::random_normal(2, 1, 1.0, rng);
  const double d = 0.07;
  const auto [h1, y1] = ssm_layer_step(p, h0, u1, d);
  const auto [h2, y2] = ssm_layer_step(p, h1, u2, d);
  const Matrix I = Matrix::Identity(5, 5);
  const Matrix Pinv = (I - 0.5 * d * p.A).inverse();
  const Matrix Ab = Pinv * (I + 0.5 * d * p.A);
  const Matrix Bb = d * Pinv * p.B;
  const Vector ref = Ab * Ab * h0 + Ab * Bb * u1 + Bb * u2;
  CHECK((h2 - ref).norm() < 1e-12);
  CHECK((y2 - p.C * ref).norm() < 1e-12);
  CHECK_THROWS_AS(ssm_layer_step(p, h0, Vector::Zero(3), d), ShapeError);
}

TEST_CASE("stack: one layer follows the manual recurrence") {
  std::mt19937_64 rng(3);
  ad::ParameterStore store;
  SSMStackConfig cfg{2, 3, 4, 1, DeltaMode::RawGap};
  SSMStack stack(store, "s", cfg, rng);
  const auto& layer = stack.layers().front();
  const Matrix Win = stack.input_projection().weight().value;
  const Vector bin = stack.input_projection().bias().value;
  const Matrix A = layer.A->value, B = layer.B->value, C = layer.C->value;
  const Matrix Wm = layer.mix.weight().value;
  const Vector bm = layer.mix.bias().value;

  const Vector u = (Vector(2) << 0.3, -0.8).finished();
  const std::vector<Vector> inputs(6, u);
  const std::vector<double> deltas{0.05, 0.05, 0.1, 0.02, 0.05, 0.3};
  const auto out = run_ssm_stack(stack, inputs, deltas);
  REQUIRE(out.size() == inputs.size());

  Vector h = Vector::Zero(4);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Vector x = Win * inputs[i] + bin;
    const auto d = discretize_bilinear(A, B, deltas[i]);
    h = d.A_bar * h + d.B_bar * x;
    const Vector y = C * h;
    const Vector g = y.unaryExpr([](double v) { return ad::gelu_value(v); });
    const Vector expected = x + Wm * g + bm;
    CHECK((out[i] - expected).norm() < 1e-12);
  }
}

TEST_CASE("stack: determinism and empty input") {
  std::mt19937_64 rng(4);
  ad::ParameterStore store;
  SSMStack stack(store, "s", {1, 4, 4, 2, DeltaMode::LearnedScale}, rng);
  std::vector<Vector> in;
  std::vector<double> d;
  for (int i = 0; i < 10; ++i) {
    in.push_back(Vector::Constant(1, std::sin(i)));
    d.push_back(0.05);
  }
  std::vector<double> d2;
  for (double x : d) d2.push_back(x * 1.0);
  const auto a = run_ssm_stack(stack, in, d);
  const auto b = run_ssm_stack(stack, in, d2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(run_ssm_stack(stack, {}, {}).empty());
  CHECK_THROWS_AS(run_ssm_stack(stack, in, {0.1}), ShapeError);
}

TEST_CASE("stack: batched step equals per-column steps") {
  std::mt19937_64 rng(5);
  ad::ParameterStore store;
  SSMStack stack(store, "s", {2, 4, 3, 2, DeltaMode::RawGap}, rng);
  const Matrix x = nn::random_normal(2, 3, 1.0, rng);
  const std::vector<double> deltas{0.05, 0.1, 0.2};
  ad::Tape tape(false);
  auto st = stack.initial_state(tape, 3);
  const Matrix both = stack.step(tape, st, tape.constant(x), deltas).value();
  const Matrix both2 = stack.step(tape, st, tape.constant(x), deltas).value();
  for (int j = 0; j < 3; ++j) {
    const auto single = run_ssm_stack(stack, {x.col(j), x.col(j)}, {deltas[j], deltas[j]});
    CHECK((single[0] - both.col(j)).norm() < 1e-12);
    CHECK((single[1] - both2.col(j)).norm() < 1e-12);
  }
}

TEST_CASE("stack: parameter gradients match central differences") {
  std::mt19937_64 rng(6);
  ad::ParameterStore store;
  const SSMStack stack(store, "s", {2, 8, 4, 2, DeltaMode::LearnedScale}, rng);
  std::vector<Matrix> xs, ws;
  for (int t = 0; t < 6; ++t) {
    xs.push_back(nn::random_normal(2, 2, 1.0, rng));
    ws.push_back(nn::random_normal(8, 2, 1.0, rng));
  }
  const std::vector<double> deltas{0.05, 0.2};
  auto forward = [&](ad::Tape& tape) {
    auto st = stack.initial_state(tape, 2);
    std::vector<ad::Var> terms;
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const ad::Var out = stack.step(tape, st, tape.constant(xs[t]), deltas);
      terms.push_back(ad::add(ad::sum(ad::mul(out, tape.constant(ws[t]))), ad::scale(ad::sum(ad::square(out)), 0.1)));
    }
    ad::Var total = terms[0];
    for (std::size_t t = 1; t < terms.size(); ++t) total = ad::add(total, terms[t]);
    return total;
  };
  {
    ad::Tape tape;
    const ad::Var loss = forward(tape);
    store.zero_grad();
    tape.backward(loss);
  }
  const double h = 1e-5;
  int checked = 0;
  for (ad::Parameter* p : store.all()) {
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      const double v0 = p->value(k);
      p->value(k) = v0 + h;
      ad::Tape tp(false);
      const double fp = forward(tp).value()(0, 0);
      p->value(k) = v0 - h;
      ad::Tape tm(false);
      const double fm = forward(tm).value()(0, 0);
      p->value(k) = v0;
      const double fd = (fp - fm) / (2 * h);
      const double an = p->grad(k);
      CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}) < 1e-4);
      ++checked;
    }
  }
  CHECK(checked == static_cast<int>(store.scalar_count()));
}

}  // TEST_SUITE
