#include "physssm/unit.hpp"

#include <cmath>

#include "physssm/errors.hpp"

namespace physssm {

namespace {

Matrix unflatten(const Eigen::Ref<const Vector>& flat, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = flat(i * cols + k);
  }
  return m;
}

Vector flatten(const Matrix& m) {
  Vector v(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) v(i * m.cols() + k) = m(i, k);
  }
  return v;
}

ad::Var broadcast(ad::Tape& tape, ad::Parameter& p, Eigen::Index batch) {
  return ad::add_bias(tape.constant(Matrix::Zero(p.value.rows(), batch)), tape.param(p));
}

}  // namespace

// ---------------------------------------------------------------- learner

UnknownDynamicsLearner::UnknownDynamicsLearner(ad::ParameterStore& store, const std::string& name,
                                               const DynamicsSpec& spec, LearnerConfig config,
                                               std::mt19937_64& rng)
    : config_(std::move(config)), dim_(spec.augmented_dim), control_dim_(spec.control_dim) {
  learns_B_ = config_.learn_B && control_dim_ > 0 && spec.mask_B.sum() > 0;
  const int in_dim = dim_ + control_dim_;
  const int nA = dim_ * dim_;
  const int nB = dim_ * control_dim_;
  if (config_.kind == LearnerKind::Constant) {
    const_A_ = &store.add(name + "/const_A", Matrix::Zero(nA, 1));
    if (learns_B_) const_B_ = &store.add(name + "/const_B", Matrix::Zero(nB, 1));
    return;
  }
  config_.stack_A.input_dim = in_dim;
  stack_A_ = SSMStack(store, name + "/stack_A", config_.stack_A, rng);
  head_A_ = nn::Linear(store, name + "/head_A", config_.stack_A.width, nA, rng, 0.1);
  if (learns_B_) {
    config_.stack_B.input_dim = in_dim;
    stack_B_ = SSMStack(store, name + "/stack_B", config_.stack_B, rng);
    head_B_ = nn::Linear(store, name + "/head_B", config_.stack_B.width, nB, rng, 0.1);
  }
}

UnknownDynamicsLearner::State UnknownDynamicsLearner::initial_state(ad::Tape& tape,
                                                                    Eigen::Index batch) const {
  State s;
  if (config_.kind == LearnerKind::Stack) {
    s.stack_A = stack_A_.initial_state(tape, batch);
    if (learns_B_) s.stack_B = stack_B_.initial_state(tape, batch);
  }
  return s;
}

RawUnknown UnknownDynamicsLearner::step(ad::Tape& tape, State& state, const ad::Var& zbar,
                                        const ad::Var& u, std::span<const double> deltas) const {
  const bool u_ok = control_dim_ == 0 ? (!u.valid() || u.rows() == 0)
                                       : (u.valid() && u.rows() == control_dim_ &&
                                          u.cols() == zbar.cols());
  if (zbar.rows() != dim_ || !u_ok) {
    throw ShapeError("learner: input shape does not match the dynamics spec");
  }
  const auto batch = zbar.cols();
  RawUnknown out;
  if (config_.kind == LearnerKind::Constant) {
    out.A = broadcast(tape, *const_A_, batch);
    if (learns_B_) out.B = broadcast(tape, *const_B_, batch);
    return out;
  }
  ad::Var input = control_dim_ > 0 ? ad::vcat({zbar, u}) : zbar;
  out.A = ad::scale(head_A_.forward(tape, stack_A_.step(tape, state.stack_A, input, deltas)),
                    config_.output_scale);
  if (learns_B_) {
    out.B = ad::scale(head_B_.forward(tape, stack_B_.step(tape, state.stack_B, input, deltas)),
                      config_.output_scale);
  }
  return out;
}

// ---------------------------------------------------------------- plain API

Matrix apply_knowledge_mask(const Matrix& raw, const Matrix& mask) {
  if (raw.rows() != mask.rows() || raw.cols() != mask.cols()) {
    throw ShapeError("knowledge mask shape does not match the raw matrix");
  }
  return raw.cwiseProduct(mask);
}

Matrix compose_state_matrix(const DynamicsSpec& spec, const Vector& zbar, const Matrix& A_unk) {
  if (zbar.size() != spec.augmented_dim || A_unk.rows() != spec.augmented_dim ||
      A_unk.cols() != spec.augmented_dim) {
    throw ShapeError("compose: dimensions do not match spec " + spec.name);
  }
  return spec.known_matrix(zbar, 0.0) + spec.factor_A.evaluate(zbar).cwiseProduct(A_unk);
}

PhySSMState initial_unit_state(const DynamicsSpec& spec, const UnknownDynamicsLearner& learner,
                               const Vector& z, double t0) {
  PhySSMState s;
  s.zbar = spec.augment(z);
  s.t = t0;
  if (learner.config().kind == LearnerKind::Stack) {
    for (const auto& L : learner.stack_A().layers()) {
      s.hidden_A.push_back(Matrix::Zero(L.A->value.rows(), 1));
    }
    if (learner.learns_B()) {
      ad::Tape tape(false);
      auto st = learner.initial_state(tape, 1);
      for (const auto& h : st.stack_B.hidden) s.hidden_B.push_back(h.value());
    }
  }
  return s;
}

std::pair<Matrix, std::optional<Matrix>> learn_unknown(const UnknownDynamicsLearner& learner,
                                                       PhySSMState& state, const Vector& u,
                                                       double delta) {
  ad::Tape tape(false);
  auto st = learner.initial_state(tape, 1);
  if (learner.config().kind == LearnerKind::Stack) {
    if (state.hidden_A.size() != st.stack_A.hidden.size() ||
        state.hidden_B.size() != st.stack_B.hidden.size()) {
      throw ShapeError("learn_unknown: hidden state does not match the learner");
    }
    for (std::size_t l = 0; l < state.hidden_A.size(); ++l) {
      st.stack_A.hidden[l] = tape.constant(state.hidden_A[l]);
    }
    for (std::size_t l = 0; l < state.hidden_B.size(); ++l) {
      st.stack_B.hidden[l] = tape.constant(state.hidden_B[l]);
    }
  }
  auto raw = learner.step(tape, st, tape.constant(state.zbar), tape.constant(u),
                          std::span<const double>(&delta, 1));
  for (std::size_t l = 0; l < state.hidden_A.size(); ++l) {
    state.hidden_A[l] = st.stack_A.hidden[l].value();
  }
  for (std::size_t l = 0; l < state.hidden_B.size(); ++l) {
    state.hidden_B[l] = st.stack_B.hidden[l].value();
  }
  const int d = learner.augmented_dim();
  Matrix A = unflatten(raw.A.value().col(0), d, d);
  std::optional<Matrix> B;
  if (raw.B.valid()) B = unflatten(raw.B.value().col(0), d, learner.control_dim());
  return {std::move(A), std::move(B)};
}

PhySSMState compose_and_step(const DynamicsSpec& spec, const PhySSMState& state,
                             const Matrix& A_unk, const std::optional<Matrix>& B_unk,
                             const Vector& u, double delta) {
  if (u.size() != spec.control_dim) throw ShapeError("compose_and_step: control size");
  const Matrix A = compose_state_matrix(spec, state.zbar, A_unk);
  Matrix B = spec.known_B.size() != 0 ? spec.known_B
                                      : Matrix::Zero(spec.augmented_dim, spec.control_dim);
  if (B_unk) {
    if (B_unk->rows() != B.rows() || B_unk->cols() != B.cols()) {
      throw ShapeError("compose_and_step: B_unk shape");
    }
    B += *B_unk;
  }
  const auto disc = discretize_bilinear(A, B, delta);
  PhySSMState next = state;
  next.zbar = disc.A_bar * state.zbar + disc.B_bar * u;
  next.t = state.t + delta;
  if (!next.zbar.allFinite()) throw NumericError("compose_and_step: non-finite state");
  return next;
}

std::vector<Vector> rollout(const DynamicsSpec& spec, const UnknownDynamicsLearner& learner,
                            const Vector& zbar_init, const std::vector<Vector>& controls,
                            const std::vector<double>& deltas) {
  if (controls.size() != deltas.size()) throw ShapeError("rollout: one delta per control");
  PhySSMState state = initial_unit_state(spec, learner, Vector::Zero(spec.state_dim));
  state.zbar = zbar_init;
  std::vector<Vector> out;
  out.reserve(controls.size());
  for (std::size_t i = 0; i < controls.size(); ++i) {
    try {
      auto [A_raw, B_raw] = learn_unknown(learner, state, controls[i], deltas[i]);
      Matrix A_unk = apply_knowledge_mask(A_raw, spec.mask_A);
      std::optional<Matrix> B_unk;
      if (B_raw) B_unk = apply_knowledge_mask(*B_raw, spec.mask_B);
      state = compose_and_step(spec, state, A_unk, B_unk, controls[i], deltas[i]);
    } catch (const Error& e) {
      throw NumericError("rollout step " + std::to_string(i) + ": " + e.what());
    }
    out.push_back(state.zbar);
  }
  return out;
}

// ---------------------------------------------------------------- differentiable ops

ad::Var mask_flat(const ad::Var& raw, const Matrix& mask) {
  const Vector m = flatten(mask);
  if (raw.rows() != m.size()) throw ShapeError("mask_flat: flattened size mismatch");
  ad::Tape& t = raw.tape();
  const int ir = raw.id();
  Matrix out = raw.value().array().colwise() * m.array();
  return t.push(std::move(out), raw.needs_grad(), [ir, m](ad::Tape& t, const Matrix& g) {
    t.accumulate(ir, (g.array().colwise() * m.array()).matrix());
  });
}

ad::Var unit_step(const DynamicsSpec& spec, const ad::Var& zbar, const ad::Var& A_unk,
                  const ad::Var& B_unk, const ad::Var& u, std::span<const double> deltas) {
  const Eigen::Index d = spec.augmented_dim;
  const Eigen::Index du = spec.control_dim;
  const auto batch = zbar.cols();
  if (zbar.rows() != d || A_unk.rows() != d * d || A_unk.cols() != batch || u.rows() != du ||
      u.cols() != batch || static_cast<Eigen::Index>(deltas.size()) != batch ||
      (B_unk.valid() && (B_unk.rows() != d * du || B_unk.cols() != batch))) {
    throw ShapeError("unit_step: inconsistent shapes for spec " + spec.name);
  }
  const Matrix known_B = spec.known_B.size() != 0 ? spec.known_B : Matrix::Zero(d, du);
  const DynamicsSpec* sp = &spec;
  const bool has_B = B_unk.valid();
  const std::vector<double> dts(deltas.begin(), deltas.end());

  // Per-column pieces shared by the forward and backward passes.
  struct Column {
    Matrix A_unk, F, A, B, P_inv;
  };
  auto column = [sp, d, du, has_B, known_B](const Vector& z, const Eigen::Ref<const Vector>& a_flat,
                                            const Matrix* b_all, Eigen::Index j, double delta) {
    Column c;
    c.A_unk = unflatten(a_flat, d, d);
    c.F = sp->factor_A.evaluate(z);
    c.A = sp->known_A.evaluate(z) + c.F.cwiseProduct(c.A_unk);
    c.B = known_B;
    if (has_B) c.B += unflatten(b_all->col(j), d, du);
    const Matrix P = Matrix::Identity(d, d) - 0.5 * delta * c.A;
    Eigen::PartialPivLU<Matrix> lu(P);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-13) || !std::isfinite(rcond)) throw DiscretizationSingular(delta, rcond);
    c.P_inv = lu.inverse();
    return c;
  };

  Matrix out(d, batch);
  const Matrix* b_all = has_B ? &B_unk.value() : nullptr;
  for (Eigen::Index j = 0; j < batch; ++j) {
    const double dt = dts[static_cast<std::size_t>(j)];
    if (!(dt > 0)) throw ConfigError("unit_step: delta must be positive");
    const Vector z = zbar.value().col(j);
    Column c = column(z, A_unk.value().col(j), b_all, j, dt);
    const Vector rhs = z + 0.5 * dt * (c.A * z) + dt * (c.B * u.value().col(j));
    out.col(j).noalias() = c.P_inv * rhs;
  }
  if (!out.allFinite()) throw NumericError("unit_step: non-finite latent state");

  ad::Tape& t = zbar.tape();
  const bool grad = ad::any_needs_grad({zbar, A_unk, u}) || (has_B && B_unk.needs_grad());
  const int iz = zbar.id(), ia = A_unk.id(), iu = u.id(), ib = has_B ? B_unk.id() : -1;
  const int io = static_cast<int>(t.size());
  return t.push(std::move(out), grad, [=](ad::Tape& t, const Matrix& g) {
    const Matrix& zv = t.value(iz);
    const Matrix& av = t.value(ia);
    const Matrix& uv = t.value(iu);
    const Matrix& ov = t.value(io);
    const Matrix* bv = has_B ? &t.value(ib) : nullptr;
    Matrix gz = Matrix::Zero(d, batch);
    Matrix ga(d * d, batch);
    Matrix gu(du, batch);
    Matrix gb = has_B ? Matrix(d * du, batch) : Matrix();
    const auto& known = sp->known_A.linear;
    const auto& factor = sp->factor_A.linear;
    for (Eigen::Index j = 0; j < batch; ++j) {
      const double dt = dts[static_cast<std::size_t>(j)];
      const Vector z = zv.col(j);
      Column c = column(z, av.col(j), bv, j, dt);
      const Vector w = c.P_inv.transpose() * g.col(j);
      const Matrix gA = (0.5 * dt) * w * (z + ov.col(j)).transpose();
      gz.col(j) = w + 0.5 * dt * (c.A.transpose() * w);
      for (std::size_t k = 0; k < known.size(); ++k) {
        gz(static_cast<Eigen::Index>(k), j) += gA.cwiseProduct(known[k]).sum();
      }
      for (std::size_t k = 0; k < factor.size(); ++k) {
        gz(static_cast<Eigen::Index>(k), j) +=
            gA.cwiseProduct(c.A_unk).cwiseProduct(factor[k]).sum();
      }
      ga.col(j) = flatten(gA.cwiseProduct(c.F));
      gu.col(j) = dt * (c.B.transpose() * w);
      if (has_B) gb.col(j) = flatten(dt * w * uv.col(j).transpose());
    }
    t.accumulate(iz, gz);
    t.accumulate(ia, ga);
    t.accumulate(iu, gu);
    if (has_B) t.accumulate(ib, gb);
  });
}

ad::Var augment(const DynamicsSpec& spec, const ad::Var& z) {
  if (z.rows() != spec.state_dim) throw ShapeError("augment: state size mismatch");
  const auto batch = z.cols();
  Matrix out(spec.augmented_dim, batch);
  for (Eigen::Index j = 0; j < batch; ++j) out.col(j) = spec.augment(z.value().col(j));
  ad::Tape& t = z.tape();
  const int iz = z.id();
  const DynamicsSpec* sp = &spec;
  return t.push(std::move(out), z.needs_grad(), [iz, sp](ad::Tape& t, const Matrix& g) {
    const Matrix& zv = t.value(iz);
    Matrix gz(zv.rows(), zv.cols());
    for (Eigen::Index j = 0; j < zv.cols(); ++j) {
      gz.col(j) = sp->augment_jacobian(zv.col(j)).transpose() * g.col(j);
    }
    t.accumulate(iz, gz);
  });
}

}  // namespace physssm
