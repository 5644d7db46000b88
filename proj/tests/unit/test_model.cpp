#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "physssm/errors.hpp"
#include "physssm/model.hpp"
#include "physssm/nn.hpp"

using namespace physssm;
using namespace physssm::testing;

TEST_SUITE("model") {

TEST_CASE("encoder: positive stds and deterministic outputs") {
  const PhySSMModel model(tiny_model("pendulum", 3), 3);
  const auto trs = random_trajectories(1, 25, 3, 1, 8);
  std::vector<double> deltas{0.05};
  for (std::size_t i = 1; i < trs[0].size(); ++i) deltas.push_back(trs[0].times[i] - trs[0].times[i - 1]);
  const GaussianSeq a = encode_posterior(model, trs[0].observations, deltas);
  const GaussianSeq b = encode_posterior(model, trs[0].observations, deltas);
  REQUIRE(a.size() == 25);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a.stds[i].array() > 0.0).all());
    CHECK(a.means[i] == b.means[i]);
    CHECK(a.stds[i] == b.stds[i]);
  }
  CHECK_THROWS_AS(encode_posterior(model, trs[0].observations, {0.05}), ShapeError);
}

TEST_CASE("prior: true pendulum coefficients track RK4 over one step") {
  ModelConfig mc = tiny_model("pendulum", 3);
  mc.learner.kind = LearnerKind::Constant;
  PhySSMModel model(mc, 4);
  const double m = 1.0, g = 10.0, b = 0.7, l = 1.4;
  Matrix A = Matrix::Zero(16, 1);
  A(1 * 4 + 1) = -b / m;
  A(1 * 4 + 2) = -g / l;
  model.learner().constant_A()->value = A;
  REQUIRE(model.learner().constant_B() != nullptr);
  model.learner().constant_B()->value = Matrix::Zero(4, 1);
  model.learner().constant_B()->value(1, 0) = 1.0 / (m * l * l);

  const DerivativeFn f = [&](const Vector& z, const Vector& u, double) {
    Vector d(2);
    d << z(1), -(g / l) * std::sin(z(0)) - (b / m) * z(1) + u(0) / (m * l * l);
    return d;
  };
  const Vector z0 = (Vector(2) << 0.8, -0.3).finished();
  const Vector u = Vector::Constant(1, 2.5);
  for (double delta : {0.02, 0.01}) {
    PriorPredictor prior(model);
    const auto [mean, sd] = prior.step(z0, u, delta);
    const std::vector<double> t{0.0, delta};
    const auto ref = integrate_rk4(f, z0, t, std::vector<Vector>{u, u}, delta / 50);
    CHECK((mean - ref[1]).norm() < 20.0 * delta * delta * delta);
    CHECK((sd.array() > 0.0).all());
  }
}

TEST_CASE("prior: deterministic given identical inputs") {
  const PhySSMModel model(tiny_model("pendulum", 3), 5);
  PriorPredictor a(model), b(model);
  const Vector z = (Vector(2) << 0.2, 0.1).finished();
  for (int i = 0; i < 4; ++i) {
    const auto pa = a.step(z, Vector::Constant(1, 0.3), 0.05);
    const auto pb = b.step(z, Vector::Constant(1, 0.3), 0.05);
    CHECK(pa.first == pb.first);
    CHECK(pa.second == pb.second);
    CHECK((pa.second.array() > 0.0).all());
  }
}

TEST_CASE("decoder: zero latent and batching transparency") {
  ModelConfig mc = tiny_model("pendulum", 3);
  mc.decoder_layers = 2;
  const PhySSMModel model(mc, 6);
  const auto zero = decode(model, {Vector::Zero(2)});
  CHECK(zero[0].allFinite());
  std::mt19937_64 rng(1);
  std::vector<Vector> zs;
  for (int i = 0; i < 5; ++i) zs.emplace_back(nn::random_normal(2, 1, 1.0, rng));
  const auto all = decode(model, zs);
  for (std::size_t i = 0; i < zs.size(); ++i) {
    CHECK((decode(model, {zs[i]})[0] - all[i]).norm() < 1e-14);
  }
  CHECK(decode(model, {}).empty());
}

TEST_CASE("predict: window and horizon lengths") {
  const PhySSMModel model(tiny_model("pendulum", 3), 7);
  const auto trs = random_trajectories(2, 240, 3, 1, 9);
  const SequenceBatch batch = batch_of(trs, 240);
  const Prediction p = model.predict(batch, 160, 80);
  CHECK(p.recon.size() == 160);
  CHECK(p.extrap.size() == 80);
  CHECK(p.post_mean.size() == 160);
  CHECK(p.extrap.front().cols() == 2);
  const Prediction q = model.predict(batch_of(trs, 160), 160, 0);
  CHECK(q.extrap.empty());
  for (std::size_t i = 0; i < 160; ++i) CHECK(p.recon[i] == q.recon[i]);
}

TEST_CASE("predict: single-trajectory wrapper matches the batch") {
  const PhySSMModel model(tiny_model("pendulum", 3), 8);
  const auto trs = random_trajectories(2, 30, 3, 1, 10);
  const Prediction p = model.predict(batch_of(trs, 30), 20, 10);
  const FullForward f = forward_full(model, trs[1], 0.05, 20, 10);
  for (std::size_t i = 0; i < 20; ++i) CHECK((f.recon[i] - p.recon[i].col(1)).norm() < 1e-12);
  for (std::size_t i = 0; i < 10; ++i) CHECK((f.extrap[i] - p.extrap[i].col(1)).norm() < 1e-12);
}

TEST_CASE("data-driven ablation matches the parameter budget") {
  ModelConfig phys = default_config("pendulum").model;
  phys.obs_dim = 3;
  ModelConfig dd = phys;
  dd.transition = TransitionKind::DataDriven;
  const PhySSMModel a(phys, 1);
  const PhySSMModel b(dd, 1);
  const double na = static_cast<double>(a.params().scalar_count());
  const double nb = static_cast<double>(b.params().scalar_count());
  CHECK(std::abs(na - nb) / na < 0.05);
  CHECK(matched_data_driven_width(phys) > 0);
}

TEST_CASE("model: loss is finite and every transition kind builds") {
  for (TransitionKind k : {TransitionKind::PhySSM, TransitionKind::DataDriven}) {
    ModelConfig mc = tiny_model("pendulum", 3);
    mc.transition = k;
    const PhySSMModel model(mc, 2);
    const auto trs = random_trajectories(3, 20, 3, 1, 4);
    std::mt19937_64 rng(0);
    ad::Tape tape;
    const LossVars lv = model.loss(tape, batch_of(trs, 20), 20, LossOptions{}, rng);
    CHECK(std::isfinite(lv.total.value()(0, 0)));
    CHECK(lv.kl.value()(0, 0) >= 0.0);
    CHECK(lv.reg.value()(0, 0) >= 0.0);
  }
  CHECK(transition_from_string(to_string(TransitionKind::DataDriven)) == TransitionKind::DataDriven);
  CHECK_THROWS_AS(transition_from_string("lstm"), ConfigError);
}

TEST_CASE("model: SIR and the 4-dim linear system build") {
  const PhySSMModel sir(tiny_model("sir", 3), 1);
  CHECK(sir.latent_dim() == 3);
  const PhySSMModel lin(tiny_model("linear4", 4), 1);
  CHECK(lin.latent_dim() == 4);
  const auto trs = random_trajectories(2, 12, 4, 0, 3);
  const Prediction p = lin.predict(batch_of(trs, 12), 8, 4);
  CHECK(p.extrap.size() == 4);
}

}  // TEST_SUITE
