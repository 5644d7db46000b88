#include "physssm/model.hpp"

#include <cmath>

#include "physssm/errors.hpp"

namespace physssm {

std::string to_string(TransitionKind kind) {
  return kind == TransitionKind::PhySSM ? "physssm" : "data_driven";
}

TransitionKind transition_from_string(const std::string& s) {
  if (s == "physssm") return TransitionKind::PhySSM;
  if (s == "data_driven") return TransitionKind::DataDriven;
  throw ConfigError("unknown transition kind: " + s);
}

namespace {

DynamicsSpec spec_for(const ModelConfig& c) {
  if (c.system == "sir") return build_sir_spec(c.population);
  return build_spec(c.system);
}

Eigen::Index linear_count(Eigen::Index in, Eigen::Index out) { return in * out + out; }

Eigen::Index stack_count(const SSMStackConfig& c) {
  const Eigen::Index w = c.width, n = c.state_size;
  Eigen::Index total = linear_count(c.input_dim, w);
  for (int l = 0; l < c.layers; ++l) {
    total += n * n + n * w + w * n + linear_count(w, w);
    if (c.delta_mode == DeltaMode::LearnedScale) total += 1;
  }
  return total;
}

PhySSMModel::Gaussian split_gaussian(const ad::Var& out, int dim, double lo, double hi) {
  return {ad::rows(out, 0, dim), ad::clamp(ad::rows(out, dim, dim), lo, hi)};
}

void check_finite(const ad::Var& v, const char* what, std::size_t step) {
  if (!v.value().allFinite()) {
    throw NumericError(std::string(what) + ": non-finite values at step " + std::to_string(step));
  }
}

}  // namespace

double quantize_delta(double delta) { return std::round(delta * 1e9) / 1e9; }

int matched_data_driven_width(const ModelConfig& physics_config) {
  ModelConfig full = physics_config;
  full.transition = TransitionKind::PhySSM;
  const PhySSMModel reference(full, 0);
  const Eigen::Index target = reference.params().scalar_count();

  ModelConfig probe = physics_config;
  probe.transition = TransitionKind::DataDriven;
  probe.data_driven.width = 1;
  const PhySSMModel small(probe, 0);
  SSMStackConfig dd = probe.data_driven;
  dd.input_dim = small.latent_dim() + small.spec().control_dim;
  const Eigen::Index dz = small.latent_dim();
  const Eigen::Index base = small.params().scalar_count() - stack_count(dd) - linear_count(1, dz);

  int best = 1;
  Eigen::Index best_gap = -1;
  for (int w = 1; w <= 1024; ++w) {
    dd.width = w;
    const Eigen::Index count = base + stack_count(dd) + linear_count(w, dz);
    const Eigen::Index gap = count > target ? count - target : target - count;
    if (best_gap < 0 || gap < best_gap) {
      best = w;
      best_gap = gap;
    }
    if (count > target) break;
  }
  return best;
}

PhySSMModel::PhySSMModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      spec_(std::make_unique<DynamicsSpec>(spec_for(config))),
      store_(std::make_unique<ad::ParameterStore>()) {
  spec_->check_invariants();
  if (config.obs_dim < 1) throw ConfigError("model: obs_dim must be positive");
  if (!(config.log_std_min < config.log_std_max)) throw ConfigError("model: log-std range empty");
  if (!(config.obs_scale > 0)) throw ConfigError("model: obs_scale must be positive");
  std::mt19937_64 rng(seed);
  const int dz = spec_->state_dim, dzb = spec_->augmented_dim, du = spec_->control_dim;
  auto& store = *store_;

  prenet_ = nn::Mlp(store, "encoder/prenet", config.obs_dim, config.prenet_hidden,
                    config.prenet_hidden, config.prenet_layers, rng);
  SSMStackConfig enc = config.encoder;
  enc.input_dim = config.prenet_hidden;
  encoder_ = SSMStack(store, "encoder/ssm", enc, rng);
  encoder_head_ = nn::Linear(store, "encoder/head", enc.width, 2 * dz, rng, 0.5);

  if (config.transition == TransitionKind::PhySSM) {
    learner_ = UnknownDynamicsLearner(store, "unit", *spec_, config.learner, rng);
  } else {
    SSMStackConfig dd = config.data_driven;
    if (dd.width <= 0) dd.width = matched_data_driven_width(config);
    dd.input_dim = dz + du;
    config_.data_driven = dd;
    data_driven_ = SSMStack(store, "transition/ssm", dd, rng);
    data_driven_head_ = nn::Linear(store, "transition/head", dd.width, dz, rng, 0.1);
  }

  if (config.prior_mean_linear) {
    prior_head_ = nn::Linear(store, "prior/head", dzb, 2 * dz, rng);
    prior_head_.weight().value.setZero();
    for (int k = 0; k < dz; ++k) prior_head_.weight().value(k, k) = 1.0;
  } else {
    prior_head_ = nn::Linear(store, "prior/head", dzb, dz, rng);
    prior_head_.weight().value.setZero();
  }
  prior_head_.bias().value.bottomRows(dz).setConstant(config.prior_log_std_init);

  decoder_ = nn::Mlp(store, "decoder", dzb, config.decoder_hidden, config.obs_dim,
                     config.decoder_layers, rng);
}

PhySSMModel::EncoderState PhySSMModel::encoder_initial(ad::Tape& tape, Eigen::Index batch) const {
  return {encoder_.initial_state(tape, batch)};
}

PhySSMModel::Gaussian PhySSMModel::encoder_step(ad::Tape& tape, EncoderState& state,
                                                const ad::Var& x,
                                                std::span<const double> deltas) const {
  if (x.rows() != config_.obs_dim) throw ShapeError("encoder: observation size mismatch");
  const ad::Var feat = ad::gelu(prenet_.forward(tape, x));
  const ad::Var y = encoder_.step(tape, state.stack, feat, deltas);
  return split_gaussian(encoder_head_.forward(tape, y), latent_dim(), config_.log_std_min,
                        config_.log_std_max);
}

PhySSMModel::PriorState PhySSMModel::prior_initial(ad::Tape& tape, Eigen::Index batch) const {
  PriorState s;
  if (config_.transition == TransitionKind::PhySSM) {
    s.learner = learner_.initial_state(tape, batch);
  } else {
    s.data_driven = data_driven_.initial_state(tape, batch);
  }
  return s;
}

PhySSMModel::Gaussian PhySSMModel::prior_step(ad::Tape& tape, PriorState& state,
                                              const ad::Var& z_prev, const ad::Var& u,
                                              std::span<const double> deltas,
                                              ad::Var* zbar_next) const {
  const ad::Var zbar = augment(*spec_, z_prev);
  ad::Var next;
  if (config_.transition == TransitionKind::PhySSM) {
    const RawUnknown raw = learner_.step(tape, state.learner, zbar, u, deltas);
    const ad::Var A = mask_flat(raw.A, spec_->mask_A);
    const ad::Var B = raw.B.valid() ? mask_flat(raw.B, spec_->mask_B) : ad::Var();
    next = unit_step(*spec_, zbar, A, B, u, deltas);
  } else {
    const ad::Var in = spec_->control_dim > 0 ? ad::vcat({z_prev, u}) : z_prev;
    const ad::Var dz = data_driven_head_.forward(
        tape, data_driven_.step(tape, state.data_driven, in, deltas));
    next = augment(*spec_, ad::add(z_prev, dz));
  }
  if (zbar_next) *zbar_next = next;
  const ad::Var head = prior_head_.forward(tape, next);
  if (config_.prior_mean_linear) {
    return split_gaussian(head, latent_dim(), config_.log_std_min, config_.log_std_max);
  }
  return {ad::rows(next, 0, latent_dim()),
          ad::clamp(head, config_.log_std_min, config_.log_std_max)};
}

ad::Var PhySSMModel::decode(ad::Tape& tape, const ad::Var& z) const {
  if (z.rows() != latent_dim()) throw ShapeError("decode: latent size mismatch");
  return decoder_.forward(tape, augment(*spec_, z));
}

LossVars PhySSMModel::loss(ad::Tape& tape, const SequenceBatch& batch, std::size_t window,
                           const LossOptions& options, std::mt19937_64& rng) const {
  if (window < 1 || window > batch.steps()) throw ShapeError("loss: window exceeds batch length");
  const Eigen::Index B = batch.batch();
  const int dz = latent_dim();
  auto enc = encoder_initial(tape, B);
  auto pri = prior_initial(tape, B);

  std::vector<ad::Var> samples, kls, regs;
  samples.reserve(window);
  kls.reserve(window);
  ad::Var z_prev;
  for (std::size_t i = 0; i < window; ++i) {
    const std::span<const double> dts(batch.deltas[i]);
    const Gaussian q = encoder_step(tape, enc, tape.constant(batch.obs[i]), dts);
    check_finite(q.mean, "encoder", i);
    const ad::Var eps = tape.constant(nn::random_normal(dz, B, 1.0, rng));
    const ad::Var zq = ad::add(q.mean, ad::mul(ad::exp(q.log_std), eps));
    if (i == 0) {
      const ad::Var zero = tape.constant(Matrix::Zero(dz, B));
      kls.push_back(ad::kl_diag(q.mean, q.log_std, zero, zero));
    } else {
      const Gaussian p = prior_step(tape, pri, z_prev, tape.constant(batch.controls[i - 1]), dts);
      check_finite(p.mean, "prior", i);
      kls.push_back(ad::kl_diag(q.mean, q.log_std, p.mean, p.log_std));
      const ad::Var eps_p = tape.constant(nn::random_normal(dz, B, 1.0, rng));
      const ad::Var zp = ad::add(p.mean, ad::mul(ad::exp(p.log_std), eps_p));
      if (options.reg_augmented) {
        regs.push_back(ad::reg_distance(augment(*spec_, zp), augment(*spec_, zq), options.metric));
      } else {
        regs.push_back(ad::reg_distance(zp, zq, options.metric));
      }
    }
    samples.push_back(zq);
    z_prev = options.prior_on_mean ? q.mean : zq;
  }

  Matrix x_all(config_.obs_dim, B * static_cast<Eigen::Index>(window));
  for (std::size_t i = 0; i < window; ++i) {
    x_all.middleCols(static_cast<Eigen::Index>(i) * B, B) = batch.obs[i];
  }
  const ad::Var x_hat = decode(tape, ad::hcat(samples));
  const double n = static_cast<double>(B) * static_cast<double>(window);

  LossVars out;
  const double inv_var = 1.0 / (config_.obs_scale * config_.obs_scale);
  out.recon =
      ad::scale(ad::sum(ad::square(ad::sub(x_hat, tape.constant(x_all)))), 0.5 * inv_var / n);
  out.kl = ad::scale(ad::sum(ad::hcat(kls)), 1.0 / n);
  if (regs.empty()) {
    out.reg = tape.constant(Matrix::Zero(1, 1));
  } else {
    out.reg = ad::scale(ad::sum(ad::hcat(regs)), 1.0 / (static_cast<double>(B) * regs.size()));
  }
  out.total = ad::add(ad::add(out.recon, ad::scale(out.kl, options.beta)),
                      ad::scale(out.reg, options.lambda));
  if (!out.total.value().allFinite()) throw NumericError("loss: non-finite total");
  return out;
}

Prediction PhySSMModel::predict(const SequenceBatch& batch, std::size_t window,
                                std::size_t horizon) const {
  if (window < 1 || window + horizon > batch.steps()) {
    throw ShapeError("predict: window + horizon exceeds batch length");
  }
  ad::Tape tape(false);
  const Eigen::Index B = batch.batch();
  const int dz = latent_dim();
  auto enc = encoder_initial(tape, B);
  auto pri = prior_initial(tape, B);
  Prediction out;
  std::vector<ad::Var> means;
  ad::Var z_prev;
  for (std::size_t i = 0; i < window; ++i) {
    const std::span<const double> dts(batch.deltas[i]);
    const Gaussian q = encoder_step(tape, enc, tape.constant(batch.obs[i]), dts);
    check_finite(q.mean, "encoder", i);
    out.post_mean.push_back(q.mean.value());
    out.post_std.push_back(q.log_std.value().array().exp());
    if (i == 0) {
      out.prior_mean.push_back(Matrix::Zero(dz, B));
      out.prior_std.push_back(Matrix::Ones(dz, B));
    } else {
      const Gaussian p = prior_step(tape, pri, z_prev, tape.constant(batch.controls[i - 1]), dts);
      out.prior_mean.push_back(p.mean.value());
      out.prior_std.push_back(p.log_std.value().array().exp());
    }
    means.push_back(q.mean);
    z_prev = q.mean;
  }
  const Matrix rec = decode(tape, ad::hcat(means)).value();
  for (std::size_t i = 0; i < window; ++i) {
    out.recon.push_back(rec.middleCols(static_cast<Eigen::Index>(i) * B, B));
  }

  std::vector<ad::Var> future;
  for (std::size_t j = 0; j < horizon; ++j) {
    const std::size_t i = window + j;
    const Gaussian p = prior_step(tape, pri, z_prev, tape.constant(batch.controls[i - 1]),
                                  std::span<const double>(batch.deltas[i]));
    check_finite(p.mean, "extrapolation", i);
    out.extrap_latent.push_back(p.mean.value());
    future.push_back(p.mean);
    z_prev = p.mean;
  }
  if (horizon > 0) {
    const Matrix ext = decode(tape, ad::hcat(future)).value();
    for (std::size_t j = 0; j < horizon; ++j) {
      out.extrap.push_back(ext.middleCols(static_cast<Eigen::Index>(j) * B, B));
    }
  }
  return out;
}

// ---------------------------------------------------------------- single-sequence API

GaussianSeq encode_posterior(const PhySSMModel& model, const std::vector<Vector>& observations,
                             const std::vector<double>& deltas) {
  if (observations.size() != deltas.size()) {
    throw ShapeError("encode_posterior: one delta per observation required");
  }
  ad::Tape tape(false);
  auto state = model.encoder_initial(tape, 1);
  GaussianSeq g;
  double t = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto q = model.encoder_step(tape, state, tape.constant(observations[i]),
                                      std::span<const double>(&deltas[i], 1));
    check_finite(q.mean, "encoder", i);
    g.means.emplace_back(q.mean.value().col(0));
    g.stds.emplace_back(q.log_std.value().col(0).array().exp());
    if (i > 0) t += deltas[i];
    g.times.push_back(t);
  }
  return g;
}

std::vector<Vector> reparameterize(const GaussianSeq& g, std::uint64_t seed) {
  g.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    Vector eps(g.means[i].size());
    for (Eigen::Index k = 0; k < eps.size(); ++k) eps(k) = gauss(rng);
    out.emplace_back(g.means[i] + g.stds[i].cwiseProduct(eps));
  }
  return out;
}

PriorPredictor::PriorPredictor(const PhySSMModel& model)
    : model_(&model), tape_(std::make_unique<ad::Tape>(false)) {
  state_ = model.prior_initial(*tape_, 1);
}

std::pair<Vector, Vector> PriorPredictor::step(const Vector& z_prev, const Vector& u,
                                               double delta) {
  const auto p = model_->prior_step(*tape_, state_, tape_->constant(z_prev), tape_->constant(u),
                                    std::span<const double>(&delta, 1));
  return {p.mean.value().col(0), p.log_std.value().col(0).array().exp()};
}

std::vector<Vector> decode(const PhySSMModel& model, const std::vector<Vector>& z) {
  std::vector<Vector> out;
  if (z.empty()) return out;
  Matrix all(model.latent_dim(), static_cast<Eigen::Index>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i].size() != model.latent_dim()) throw ShapeError("decode: latent size mismatch");
    all.col(static_cast<Eigen::Index>(i)) = z[i];
  }
  ad::Tape tape(false);
  const Matrix x = model.decode(tape, tape.constant(all)).value();
  for (Eigen::Index i = 0; i < x.cols(); ++i) out.emplace_back(x.col(i));
  return out;
}

FullForward forward_full(const PhySSMModel& model, const Trajectory& trajectory, double nominal_dt,
                         std::size_t window, std::size_t horizon) {
  const SequenceBatch batch = make_batch({&trajectory}, window + horizon, nominal_dt);
  const Prediction p = model.predict(batch, window, horizon);
  FullForward f;
  for (std::size_t i = 0; i < window; ++i) {
    f.posterior.means.emplace_back(p.post_mean[i].col(0));
    f.posterior.stds.emplace_back(p.post_std[i].col(0));
    f.posterior.times.push_back(trajectory.times[i]);
    f.prior.means.emplace_back(p.prior_mean[i].col(0));
    f.prior.stds.emplace_back(p.prior_std[i].col(0));
    f.prior.times.push_back(trajectory.times[i]);
    f.recon.emplace_back(p.recon[i].col(0));
  }
  for (std::size_t j = 0; j < horizon; ++j) f.extrap.emplace_back(p.extrap[j].col(0));
  return f;
}

SequenceBatch make_batch(const std::vector<const Trajectory*>& trajectories, std::size_t length,
                         double nominal_dt, const std::vector<const std::vector<Vector>*>& clean) {
  if (trajectories.empty()) throw ShapeError("make_batch: no trajectories");
  if (!clean.empty() && clean.size() != trajectories.size()) {
    throw ShapeError("make_batch: clean sequences must match trajectories");
  }
  if (!(nominal_dt > 0)) throw ConfigError("make_batch: nominal dt must be positive");
  const auto B = static_cast<Eigen::Index>(trajectories.size());
  const auto dx = trajectories.front()->observations.front().size();
  const auto du = trajectories.front()->controls.front().size();
  SequenceBatch b;
  b.obs.assign(length, Matrix(dx, B));
  b.controls.assign(length, Matrix(du, B));
  if (!clean.empty()) b.clean.assign(length, Matrix(dx, B));
  b.deltas.assign(length, std::vector<double>(static_cast<std::size_t>(B)));
  b.times.assign(length, std::vector<double>(static_cast<std::size_t>(B)));
  for (Eigen::Index j = 0; j < B; ++j) {
    const Trajectory& tr = *trajectories[static_cast<std::size_t>(j)];
    if (tr.size() < length) {
      throw ShapeError("make_batch: trajectory has " + std::to_string(tr.size()) +
                       " points, need " + std::to_string(length));
    }
    const auto* cl = clean.empty() ? nullptr : clean[static_cast<std::size_t>(j)];
    if (cl && cl->size() < length) throw ShapeError("make_batch: clean sequence too short");
    for (std::size_t i = 0; i < length; ++i) {
      if (tr.observations[i].size() != dx || tr.controls[i].size() != du) {
        throw ShapeError("make_batch: inconsistent observation or control sizes");
      }
      b.obs[i].col(j) = tr.observations[i];
      b.controls[i].col(j) = tr.controls[i];
      if (cl) b.clean[i].col(j) = (*cl)[i];
      const auto s = static_cast<std::size_t>(j);
      b.times[i][s] = tr.times[i];
      b.deltas[i][s] = quantize_delta(i == 0 ? nominal_dt : tr.times[i] - tr.times[i - 1]);
      if (!(b.deltas[i][s] > 0)) throw ConfigError("make_batch: timestamps must increase");
    }
  }
  return b;
}

}  // namespace physssm
