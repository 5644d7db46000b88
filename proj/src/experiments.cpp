#include "physssm/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "physssm/errors.hpp"
#include "physssm/optim.hpp"
#include "physssm/unit.hpp"

namespace physssm {

namespace {

using Clock = std::chrono::steady_clock;

/// Runs task(i) for i in [0, n) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

SeedRun train_and_test(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed,
                       std::ostream* log) {
  const auto start = Clock::now();
  const TrainResult r = train(config, data, seed, log);
  SeedRun run;
  run.seed = seed;
  run.best_epoch = r.best_epoch;
  run.test = evaluate_model(r.model, data.test, data.config.dt,
                            static_cast<std::size_t>(config.train.window),
                            static_cast<std::size_t>(config.train.extrap_horizon));
  run.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return run;
}

std::string pm(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4e +- %.2e", mean, sd);
  return buf;
}

}  // namespace

Dataset dataset_for(const ExperimentConfig& config) {
  if (!config.data_dir.empty()) return read_dataset(config.data_dir);
  config.data.validate();
  return build_dataset(config.data);
}

MetricsReport run_seeds(const ExperimentConfig& config, const Dataset& data,
                        const std::vector<std::uint64_t>& seeds, int jobs, std::ostream* log,
                        std::vector<SeedRun>* runs) {
  if (seeds.empty()) throw ConfigError("run_seeds: no seeds");
  const auto start = Clock::now();
  std::vector<SeedRun> out(seeds.size());
  std::mutex log_mutex;
  const bool serial = jobs <= 1 || seeds.size() == 1;
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    out[i] = train_and_test(config, data, seeds[i], serial ? log : nullptr);
    if (log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      *log << "[" << config.name << "] seed " << seeds[i] << " extrap_mse " << out[i].test.extrap_mse
           << " interp_mse " << out[i].test.interp_mse << " best_epoch " << out[i].best_epoch
           << " (" << out[i].seconds << "s)\n";
    }
  });
  std::vector<Metrics> m;
  for (const auto& r : out) m.push_back(r.test);
  if (runs) *runs = out;
  return aggregate(seeds, m, std::chrono::duration<double>(Clock::now() - start).count());
}

std::vector<ExperimentRow> ablation_configs(const ExperimentConfig& config) {
  ExperimentRow full{"full", config, {}};
  full.config.model.transition = TransitionKind::PhySSM;
  ExperimentRow no_unit{"no-unit", full.config, {}};
  no_unit.config.model.transition = TransitionKind::DataDriven;
  ExperimentRow no_reg{"no-reg", full.config, {}};
  no_reg.config.train.lambda = 0.0;
  for (auto* row : {&full, &no_unit, &no_reg}) row->config.name = config.name + "/" + row->name;
  return {full, no_unit, no_reg};
}

std::vector<ExperimentRow> run_ablation(const ExperimentConfig& config, const Dataset& data,
                                        int jobs, std::ostream* log) {
  auto rows = ablation_configs(config);
  for (auto& row : rows) row.report = run_seeds(row.config, data, config.train.seeds, jobs, log);
  return rows;
}

std::vector<SensitivityCell> run_sensitivity(const ExperimentConfig& config, const Dataset& data,
                                             const std::vector<double>& betas,
                                             const std::vector<double>& lambdas,
                                             std::uint64_t seed, int jobs, std::ostream* log) {
  if (betas.empty() || lambdas.empty()) throw ConfigError("sensitivity: grids must be nonempty");
  std::vector<SensitivityCell> cells;
  std::vector<ExperimentConfig> configs;
  for (double b : betas) {
    for (double l : lambdas) {
      ExperimentConfig c = config;
      c.train.beta = b;
      c.train.lambda = l;
      std::ostringstream name;
      name << config.name << "/beta=" << b << ",lambda=" << l;
      c.name = name.str();
      configs.push_back(c);
      cells.push_back({b, l, {}});
    }
  }
  std::mutex log_mutex;
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const SeedRun r = train_and_test(configs[i], data, seed, nullptr);
    cells[i].report = aggregate({seed}, {r.test}, r.seconds);
    if (log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      *log << "[" << configs[i].name << "] extrap_mae " << r.test.extrap_mae << " extrap_mse "
           << r.test.extrap_mse << " (" << r.seconds << "s)\n";
    }
  });
  return cells;
}

std::vector<ExperimentRow> run_metric_comparison(const ExperimentConfig& config,
                                                 const Dataset& data, int jobs, std::ostream* log) {
  std::vector<ExperimentRow> rows;
  for (RegMetric m : {RegMetric::Euclidean, RegMetric::Chebyshev, RegMetric::Cosine}) {
    ExperimentRow row{to_string(m), config, {}};
    row.config.train.metric = m;
    row.config.name = config.name + "/" + row.name;
    row.report = run_seeds(row.config, data, config.train.seeds, jobs, log);
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix uniqueness_true_matrix() { return linear4_matrix(); }

Matrix uniqueness_mask() { return linear4_mask(); }

UniquenessReport uniqueness_recovery_test(std::uint64_t seed, const UniquenessOptions& options) {
  if (options.trajectories < 1 || options.steps < 2 || !(options.dt > 0) ||
      options.iterations < 1) {
    throw ConfigError("uniqueness: invalid options");
  }
  UniquenessReport rep;
  rep.true_A = uniqueness_true_matrix();
  rep.mask = uniqueness_mask();
  const DynamicsSpec spec = build_linear4_spec();

  // Clean trajectories of dz/dt = A z from random initial states.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Matrix A_true = rep.true_A;
  const DerivativeFn f = [&A_true](const Vector& z, const Vector&, double) -> Vector {
    return A_true * z;
  };
  std::vector<double> times(static_cast<std::size_t>(options.steps));
  for (int i = 0; i < options.steps; ++i) times[static_cast<std::size_t>(i)] = i * options.dt;
  const std::vector<Vector> no_controls(times.size(), Vector(0));
  const Eigen::Index n = static_cast<Eigen::Index>(options.trajectories) * (options.steps - 1);
  Matrix prev(4, n), next(4, n);
  Eigen::Index col = 0;
  for (int k = 0; k < options.trajectories; ++k) {
    Vector z0(4);
    for (int j = 0; j < 4; ++j) z0(j) = normal(rng);
    const auto traj = integrate_rk4(f, z0, times, no_controls, options.dt / 50.0);
    for (std::size_t i = 1; i < traj.size(); ++i, ++col) {
      prev.col(col) = traj[i - 1];
      next.col(col) = traj[i];
    }
  }

  ad::ParameterStore store;
  LearnerConfig lc;
  lc.kind = LearnerKind::Constant;
  std::mt19937_64 init_rng(seed);
  const UnknownDynamicsLearner learner(store, "unit", spec, lc, init_rng);
  const Matrix known_before = spec.known_matrix(Vector::Zero(4), 0.0);
  AdamConfig ac;
  ac.lr = options.lr;
  Adam adam(store.all(), ac);
  const std::vector<double> deltas(static_cast<std::size_t>(n), options.dt);
  const double inv = 1.0 / static_cast<double>(n);
  try {
    for (int it = 0; it < options.iterations; ++it) {
      ad::Tape tape;
      auto state = learner.initial_state(tape, n);
      const ad::Var zbar = tape.constant(prev);
      const ad::Var u = tape.constant(Matrix::Zero(0, n));
      const RawUnknown raw = learner.step(tape, state, zbar, u, deltas);
      const ad::Var A = mask_flat(raw.A, spec.mask_A);
      const ad::Var pred = unit_step(spec, zbar, A, ad::Var(), u, deltas);
      const ad::Var loss =
          ad::scale(ad::sum(ad::square(ad::sub(pred, tape.constant(next)))), 0.5 * inv);
      rep.final_loss = loss.value()(0, 0);
      if (!std::isfinite(rep.final_loss)) throw NumericError("uniqueness: non-finite loss");
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
      rep.iterations = it + 1;
    }
  } catch (const NumericError& e) {
    rep.diverged = true;
    rep.error = e.what();
  }

  Matrix learned(4, 4);
  const Matrix& flat = learner.constant_A()->value;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) learned(i, j) = flat(i * 4 + j, 0);
  }
  rep.recovered_A =
      compose_state_matrix(spec, Vector::Zero(4), apply_knowledge_mask(learned, spec.mask_A));
  rep.known_bit_identical = true;
  rep.max_abs_error = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (rep.mask(i, j) == 1.0) {
        rep.true_unknown.push_back(rep.true_A(i, j));
        rep.recovered_unknown.push_back(rep.recovered_A(i, j));
        rep.max_abs_error =
            std::max(rep.max_abs_error, std::abs(rep.recovered_A(i, j) - rep.true_A(i, j)));
      } else if (rep.recovered_A(i, j) != known_before(i, j)) {
        rep.known_bit_identical = false;
      }
    }
  }
  if (!std::isfinite(rep.max_abs_error)) rep.max_abs_error = std::numeric_limits<double>::infinity();
  return rep;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"interp_mae", m.interp_mae},
          {"interp_mse", m.interp_mse},
          {"extrap_mae", m.extrap_mae},
          {"extrap_mse", m.extrap_mse}};
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
    nlohmann::json e = metrics_to_json(r.per_seed[i]);
    e["seed"] = r.seeds[i];
    per.push_back(e);
  }
  return {{"mean", metrics_to_json(r.mean)},
          {"std", metrics_to_json(r.std)},
          {"std_kind", "population standard deviation over seeds"},
          {"per_seed", per},
          {"runtime_seconds", r.runtime_seconds}};
}

nlohmann::json uniqueness_to_json(const UniquenessReport& r) {
  auto mat = [](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> row(m.cols());
      for (Eigen::Index j = 0; j < m.cols(); ++j) row[j] = m(i, j);
      rows.push_back(row);
    }
    return rows;
  };
  return {{"true_A", mat(r.true_A)},
          {"mask", mat(r.mask)},
          {"recovered_A", mat(r.recovered_A)},
          {"true_unknown", r.true_unknown},
          {"recovered_unknown", r.recovered_unknown},
          {"max_abs_error", r.max_abs_error},
          {"known_bit_identical", r.known_bit_identical},
          {"diverged", r.diverged},
          {"error", r.error},
          {"final_loss", r.final_loss},
          {"iterations", r.iterations}};
}

std::string format_rows(const std::vector<ExperimentRow>& rows) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %-22s %-22s %-22s %-22s\n", "row", "interp_mae",
                "interp_mse", "extrap_mae", "extrap_mse");
  out << buf;
  for (const auto& r : rows) {
    const auto& m = r.report.mean;
    const auto& s = r.report.std;
    std::snprintf(buf, sizeof(buf), "%-12s %-22s %-22s %-22s %-22s\n", r.name.c_str(),
                  pm(m.interp_mae, s.interp_mae).c_str(), pm(m.interp_mse, s.interp_mse).c_str(),
                  pm(m.extrap_mae, s.extrap_mae).c_str(), pm(m.extrap_mse, s.extrap_mse).c_str());
    out << buf;
  }
  return out.str();
}

std::string format_grid(const std::vector<SensitivityCell>& cells) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-8s %-8s %-12s %-12s %-12s %-12s\n", "beta", "lambda",
                "interp_mae", "interp_mse", "extrap_mae", "extrap_mse");
  out << buf;
  for (const auto& c : cells) {
    const auto& m = c.report.mean;
    std::snprintf(buf, sizeof(buf), "%-8g %-8g %-12.4e %-12.4e %-12.4e %-12.4e\n", c.beta,
                  c.lambda, m.interp_mae, m.interp_mse, m.extrap_mae, m.extrap_mse);
    out << buf;
  }
  return out.str();
}

}  // namespace physssm
