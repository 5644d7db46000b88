#include "physssm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>

#include "physssm/errors.hpp"

namespace physssm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t min_length(const IrregularSet& set) {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& tr : set.trajectories) n = std::min(n, tr.size());
  return n;
}

}  // namespace

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.beta = beta;
  o.lambda = lambda;
  o.metric = metric;
  o.reg_augmented = reg_augmented;
  o.prior_on_mean = prior_on_mean;
  return o;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
  if (window < 2 || extrap_horizon < 0 || train_window < 2) {
    throw ConfigError("train: window must be at least 2 and horizon non-negative");
  }
  if (!(beta >= 0) || !(lambda >= 0)) throw ConfigError("train: beta and lambda must be >= 0");
  if (eval_every < 1) throw ConfigError("train: eval_every must be positive");
  if (seeds.empty()) throw ConfigError("train: at least one seed required");
}

SequenceBatch batch_for(const IrregularSet& set, std::size_t length, double nominal_dt) {
  std::vector<const Trajectory*> trs;
  std::vector<const std::vector<Vector>*> clean;
  for (const auto& tr : set.trajectories) {
    trs.push_back(&tr);
    clean.push_back(&tr.clean_observations);
  }
  return make_batch(trs, length, nominal_dt, clean);
}

std::pair<double, double> mae_mse(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) throw ShapeError("metrics: sequence lengths differ");
  double abs_sum = 0.0, sq_sum = 0.0, count = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) {
      throw ShapeError("metrics: shape mismatch at step " + std::to_string(i));
    }
    const Matrix d = a[i] - b[i];
    abs_sum += d.cwiseAbs().sum();
    sq_sum += d.squaredNorm();
    count += static_cast<double>(d.size());
  }
  if (count == 0) return {0.0, 0.0};
  return {abs_sum / count, sq_sum / count};
}

Metrics evaluate_model(const PhySSMModel& model, const IrregularSet& set, double nominal_dt,
                       std::size_t window, std::size_t horizon, Prediction* out) {
  if (set.trajectories.empty()) throw ConfigError("evaluate: empty split");
  if (min_length(set) < window + horizon) {
    throw ConfigError("evaluate: trajectories shorter than window + horizon (" +
                      std::to_string(window + horizon) + ")");
  }
  const SequenceBatch batch = batch_for(set, window + horizon, nominal_dt);
  Prediction p = model.predict(batch, window, horizon);
  const std::vector<Matrix> ref_in(batch.clean.begin(),
                                   batch.clean.begin() + static_cast<long>(window));
  const std::vector<Matrix> ref_out(batch.clean.begin() + static_cast<long>(window),
                                    batch.clean.end());
  Metrics m;
  std::tie(m.interp_mae, m.interp_mse) = mae_mse(p.recon, ref_in);
  std::tie(m.extrap_mae, m.extrap_mse) = mae_mse(p.extrap, ref_out);
  if (out) *out = std::move(p);
  return m;
}

MetricsReport aggregate(const std::vector<std::uint64_t>& seeds, const std::vector<Metrics>& m,
                        double runtime_seconds) {
  if (seeds.size() != m.size()) throw ShapeError("aggregate: one metrics entry per seed");
  MetricsReport r;
  r.seeds = seeds;
  r.per_seed = m;
  r.runtime_seconds = runtime_seconds;
  if (m.empty()) return r;
  const double n = static_cast<double>(m.size());
  auto field = [&](double Metrics::*f, double Metrics::*out) {
    double mean = 0.0;
    for (const auto& x : m) mean += x.*f;
    mean /= n;
    double var = 0.0;
    for (const auto& x : m) var += (x.*f - mean) * (x.*f - mean);
    r.mean.*out = mean;
    r.std.*out = std::sqrt(var / n);
  };
  field(&Metrics::interp_mae, &Metrics::interp_mae);
  field(&Metrics::interp_mse, &Metrics::interp_mse);
  field(&Metrics::extrap_mae, &Metrics::extrap_mae);
  field(&Metrics::extrap_mse, &Metrics::extrap_mse);
  return r;
}

TrainResult train(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed,
                  std::ostream* log) {
  const auto start = Clock::now();
  const TrainConfig& tc = config.train;
  tc.validate();
  const std::size_t window = static_cast<std::size_t>(tc.window);
  const std::size_t horizon = static_cast<std::size_t>(tc.extrap_horizon);
  const std::size_t train_window = static_cast<std::size_t>(tc.train_window);
  if (min_length(data.train) < train_window) {
    throw ConfigError("train: training trajectories shorter than train_window");
  }
  const bool validate = !data.val.trajectories.empty();
  if (validate && min_length(data.val) < window + horizon) {
    throw ConfigError("train: validation trajectories shorter than window + horizon");
  }

  ModelConfig mc = config.model;
  mc.system = data.config.system;
  mc.obs_dim = data.obs_dim();
  mc.population = data.config.sampler.sir.population;
  TrainResult result{PhySSMModel(mc, seed), {}, -1, 0.0, 0.0};
  PhySSMModel& model = result.model;

  Adam adam(model.params().all(), tc.adam);
  std::mt19937_64 order_rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 noise_rng(seed ^ 0xc2b2ae3d27d4eb4full);
  const LossOptions opts = tc.loss_options();
  const double dt = data.config.dt;

  std::optional<SequenceBatch> val_batch;
  if (validate) val_batch = batch_for(data.val, window + horizon, dt);
  std::vector<std::size_t> order(data.train.trajectories.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_params = model.params().snapshot();
  long step = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(tc.batch_size));
      std::vector<const Trajectory*> trs;
      for (std::size_t k = b0; k < b1; ++k) trs.push_back(&data.train.trajectories[order[k]]);
      const SequenceBatch batch = make_batch(trs, train_window, dt);
      ++step;
      try {
        ad::Tape tape;
        const LossVars lv = model.loss(tape, batch, train_window, opts, noise_rng);
        adam.zero_grad();
        tape.backward(lv.total);
        adam.step();
        rec.loss.recon += lv.recon.value()(0, 0);
        rec.loss.kl += lv.kl.value()(0, 0);
        rec.loss.reg += lv.reg.value()(0, 0);
        rec.loss.total += lv.total.value()(0, 0);
      } catch (const NumericError& e) {
        throw TrainingDiverged(epoch, static_cast<int>(step), e.what());
      }
      ++batches;
    }
    rec.loss.recon /= batches;
    rec.loss.kl /= batches;
    rec.loss.reg /= batches;
    rec.loss.total /= batches;
    rec.loss.beta = opts.beta;
    rec.loss.lambda = opts.lambda;

    const bool last = epoch == tc.epochs;
    if (validate && (epoch % tc.eval_every == 0 || last)) {
      double mse = std::numeric_limits<double>::infinity();
      try {
        const Prediction p = model.predict(*val_batch, window, horizon);
        const std::vector<Matrix> ref(val_batch->clean.begin() + static_cast<long>(window),
                                      val_batch->clean.end());
        mse = horizon > 0 ? mae_mse(p.extrap, ref).second
                          : mae_mse(p.recon, std::vector<Matrix>(val_batch->clean.begin(),
                                                                 val_batch->clean.begin() +
                                                                     static_cast<long>(window)))
                                .second;
      } catch (const NumericError&) {
        // A diverging rollout scores as infinitely bad.
      }
      if (!std::isfinite(mse)) mse = std::numeric_limits<double>::infinity();
      rec.val_extrap_mse = std::isfinite(mse) ? mse : -1.0;
      if (mse < best) {
        best = mse;
        best_params = model.params().snapshot();
        result.best_epoch = epoch;
      }
    } else if (!validate && last) {
      best_params = model.params().snapshot();
      result.best_epoch = epoch;
    }
    rec.seconds = seconds_since(start);
    if (log) {
      *log << "epoch " << epoch << " recon " << rec.loss.recon << " kl " << rec.loss.kl << " reg "
           << rec.loss.reg << " total " << rec.loss.total;
      if (rec.val_extrap_mse >= 0) *log << " val_extrap_mse " << rec.val_extrap_mse;
      *log << " t " << rec.seconds << "s\n";
    }
    result.history.push_back(rec);
  }
  if (result.best_epoch < 0) {
    result.best_epoch = tc.epochs;
    best_params = model.params().snapshot();
  }
  model.params().restore(best_params);
  result.best_val_extrap_mse = std::isfinite(best) ? best : -1.0;
  result.seconds = seconds_since(start);
  return result;
}

}  // namespace physssm
