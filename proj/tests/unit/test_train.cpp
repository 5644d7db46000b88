#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "helpers.hpp"
#include "physssm/config.hpp"
#include "physssm/errors.hpp"
#include "physssm/experiments.hpp"
#include "physssm/train.hpp"

using namespace physssm;
using namespace physssm::testing;

namespace {

/// Clean, regularly sampled trajectories of the 4-dim linear system observed directly.
Dataset linear_dataset(int n_train, int steps, std::uint64_t seed) {
  Dataset d;
  d.config.system = "linear4";
  d.config.dt = 0.05;
  d.config.noise_sigma = 0.0;
  d.config.drop_rate = 0.0;
  d.normalization = Normalization::identity(4);
  const Matrix A = linear4_matrix();
  const DerivativeFn f = [&](const Vector& z, const Vector&, double) -> Vector { return A * z; };
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) t[static_cast<std::size_t>(i)] = 0.05 * i;
  auto make = [&](int n) {
    TrajectorySet set;
    set.system = "linear4";
    set.dt = 0.05;
    for (int k = 0; k < n; ++k) {
      Vector z0(4);
      for (int i = 0; i < 4; ++i) z0(i) = gauss(rng);
      Trajectory tr;
      tr.times = t;
      tr.controls.assign(t.size(), Vector());
      tr.states = integrate_rk4(f, z0, t, tr.controls, 0.005);
      tr.observations = tr.states;
      set.trajectories.push_back(std::move(tr));
    }
    return corrupt(set, 0.0, 0.0, seed);
  };
  d.train = make(n_train);
  d.val = make(2);
  d.test = make(2);
  return d;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("metrics: closed forms") {
  std::mt19937_64 rng(1);
  std::vector<Matrix> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back(nn::random_normal(3, 2, 1.0, rng));
    b.push_back(a.back().array() + 0.25);
  }
  const auto [mae0, mse0] = mae_mse(a, a);
  CHECK(mae0 == 0.0);
  CHECK(mse0 == 0.0);
  const auto [mae, mse] = mae_mse(a, b);
  CHECK(mae == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(mse == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK_THROWS_AS(mae_mse(a, {b[0]}), ShapeError);
}

TEST_CASE("metrics: denominators match a naive loop over 3 trajectories") {
  std::mt19937_64 rng(2);
  std::vector<Matrix> p, r;
  for (int i = 0; i < 7; ++i) {
    p.push_back(nn::random_normal(3, 3, 1.0, rng));
    r.push_back(nn::random_normal(3, 3, 1.0, rng));
  }
  double abs_sum = 0.0, sq_sum = 0.0;
  int count = 0;
  for (int traj = 0; traj < 3; ++traj) {
    for (std::size_t step = 0; step < p.size(); ++step) {
      for (int dim = 0; dim < 3; ++dim) {
        const double e = p[step](dim, traj) - r[step](dim, traj);
        abs_sum += std::abs(e);
        sq_sum += e * e;
        ++count;
      }
    }
  }
  const auto [mae, mse] = mae_mse(p, r);
  CHECK(mae == doctest::Approx(abs_sum / count).epsilon(1e-13));
  CHECK(mse == doctest::Approx(sq_sum / count).epsilon(1e-13));
}

TEST_CASE("aggregate: population standard deviation over seeds") {
  Metrics a, b;
  a.extrap_mse = 1.0;
  b.extrap_mse = 3.0;
  const MetricsReport r = aggregate({0, 1}, {a, b}, 0.0);
  CHECK(r.mean.extrap_mse == 2.0);
  CHECK(r.std.extrap_mse == 1.0);
  CHECK_THROWS_AS(aggregate({0}, {a, b}, 0.0), ShapeError);
}

TEST_CASE("train: identical config and seed give identical metrics") {
  const ExperimentConfig c = tiny_config();
  const Dataset data = dataset_for(c);
  const TrainResult r1 = train(c, data, 3);
  const TrainResult r2 = train(c, data, 3);
  const Metrics m1 = evaluate_model(r1.model, data.test, data.config.dt, 30, 10);
  const Metrics m2 = evaluate_model(r2.model, data.test, data.config.dt, 30, 10);
  CHECK(std::abs(m1.extrap_mse - m2.extrap_mse) <= 1e-10);
  CHECK(std::abs(m1.interp_mae - m2.interp_mae) <= 1e-10);
  CHECK(r1.history.size() == 3);
  CHECK(r1.best_epoch == r2.best_epoch);
}

TEST_CASE("train: posterior-mean reconstruction falls over the first epochs on the pendulum toy") {
  ExperimentConfig c = tiny_config();
  c.data.n_train = 8;
  c.data.n_val = 0;  // no checkpoint selection: the returned model is the last epoch
  const Dataset data = dataset_for(c);
  ModelConfig mc = c.model;
  mc.obs_dim = 3;
  std::vector<double> err{evaluate_model(PhySSMModel(mc, 0), data.train, 0.05, 30, 0).interp_mse};
  for (int k = 1; k <= 5; ++k) {
    c.train.epochs = k;
    const TrainResult r = train(c, data, 0);
    err.push_back(evaluate_model(r.model, data.train, 0.05, 30, 0).interp_mse);
  }
  for (std::size_t i = 1; i < err.size(); ++i) CHECK(err[i] < err[i - 1]);
}

TEST_CASE("train: linear-system smoke task") {
  ExperimentConfig c = tiny_config();
  c.model.system = "linear4";
  c.model.learner.output_scale = 1.0;
  c.model.obs_scale = 0.1;
  c.train.epochs = 100;
  c.train.batch_size = 8;  // full batch
  c.train.adam.lr = 1e-2;
  c.train.window = 40;
  c.train.train_window = 40;
  c.train.extrap_horizon = 20;
  c.train.eval_every = 10;
  const Dataset data = linear_dataset(8, 60, 5);
  const TrainResult r = train(c, data, 0);
  REQUIRE(r.history.size() == 100);
  std::vector<double> avg;
  for (std::size_t i = 4; i < r.history.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = i - 4; k <= i; ++k) s += r.history[k].loss.total;
    avg.push_back(s / 5.0);
  }
  for (std::size_t i = 1; i < avg.size(); ++i) CHECK(avg[i] <= avg[i - 1]);
  CHECK(r.history.back().loss.total < 0.01 * r.history.front().loss.total);
  double power = 0.0;
  int count = 0;
  for (const auto& tr : data.test.trajectories) {
    for (std::size_t i = 0; i < 40; ++i) {
      power += tr.clean_observations[i].squaredNorm();
      count += 4;
    }
  }
  const Metrics m = evaluate_model(r.model, data.test, 0.05, 40, 20);
  CHECK(m.interp_mse < 0.5 * power / count);
}

TEST_CASE("train: shape and config errors") {
  ExperimentConfig c = tiny_config();
  c.train.train_window = 500;
  const Dataset data = dataset_for(tiny_config());
  CHECK_THROWS_AS(train(c, data, 0), ConfigError);
  ExperimentConfig bad = tiny_config();
  bad.train.batch_size = 0;
  CHECK_THROWS_AS(train(bad, data, 0), ConfigError);
}

TEST_CASE("experiments: ablation rows differ in one field") {
  const auto rows = ablation_configs(default_config("pendulum"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].name == "full");
  CHECK(rows[1].config.model.transition == TransitionKind::DataDriven);
  ExperimentConfig no_reg = rows[2].config;
  CHECK(no_reg.train.lambda == 0.0);
  no_reg.train.lambda = rows[0].config.train.lambda;
  no_reg.name = rows[0].config.name;
  CHECK(to_ini(no_reg) == to_ini(rows[0].config));
}

TEST_CASE("experiments: sensitivity grid has 9 reproducible cells") {
  ExperimentConfig c = tiny_config();
  c.train.epochs = 1;
  const Dataset data = dataset_for(c);
  const auto cells = run_sensitivity(c, data, {0.1, 1, 10}, {1, 10, 100}, 0);
  REQUIRE(cells.size() == 9);
  CHECK(cells[0].beta == 0.1);
  CHECK(cells[0].lambda == 1.0);
  CHECK(cells[8].beta == 10.0);
  CHECK(cells[8].lambda == 100.0);
  const auto again = run_sensitivity(c, data, {10}, {100}, 0);
  CHECK(again[0].report.mean.extrap_mae == cells[8].report.mean.extrap_mae);
  const std::string grid = format_grid(cells);
  CHECK(std::count(grid.begin(), grid.end(), '\n') == 10);
}

TEST_CASE("experiments: seeds run identically on worker threads") {
  ExperimentConfig c = tiny_config();
  c.train.epochs = 1;
  const Dataset data = dataset_for(c);
  const MetricsReport serial = run_seeds(c, data, {0, 1}, 1);
  const MetricsReport threaded = run_seeds(c, data, {0, 1}, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(serial.per_seed[i].extrap_mse == threaded.per_seed[i].extrap_mse);
  }
}

}  // TEST_SUITE
