#include "physssm/ssm.hpp"

#include <cmath>

#include "physssm/errors.hpp"

namespace physssm {

Matrix init_hippo(int n) {
  if (n < 1) throw ConfigError("HiPPO state size must be at least 1");
  Matrix a = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < i; ++k) a(i, k) = -std::sqrt(2.0 * i + 1.0) * std::sqrt(2.0 * k + 1.0);
    a(i, i) = -(i + 1.0);
  }
  return a;
}

namespace {

constexpr double kMinRcond = 1e-13;

DiscretizationCache::Entry bilinear_entry(const Matrix& A, const Matrix& B, double delta) {
  if (!(delta > 0) || !std::isfinite(delta)) {
    throw ConfigError("discretization step must be positive, got " + std::to_string(delta));
  }
  if (A.rows() != A.cols() || B.rows() != A.rows()) throw ShapeError("discretize: A/B shapes");
  const auto n = A.rows();
  const Matrix eye = Matrix::Identity(n, n);
  const Matrix P = eye - 0.5 * delta * A;
  Eigen::PartialPivLU<Matrix> lu(P);
  const double rcond = n == 0 ? 1.0 : lu.rcond();
  if (!(rcond > kMinRcond) || !std::isfinite(rcond)) throw DiscretizationSingular(delta, rcond);

  DiscretizationCache::Entry e;
  e.delta = delta;
  e.P_inv = lu.inverse();
  e.Q = eye + 0.5 * delta * A;
  e.A_bar = e.P_inv * e.Q;
  e.B_bar = delta * (e.P_inv * B);
  return e;
}

}  // namespace

Discretized discretize_bilinear(const Matrix& A, const Matrix& B, double delta) {
  auto e = bilinear_entry(A, B, delta);
  return {std::move(e.A_bar), std::move(e.B_bar)};
}

std::shared_ptr<const DiscretizationCache::Entry> DiscretizationCache::get(const Matrix& A,
                                                                           const Matrix& B,
                                                                           double delta) {
  if (auto it = entries.find(delta); it != entries.end()) return it->second;
  auto e = std::make_shared<const Entry>(bilinear_entry(A, B, delta));
  entries.emplace(delta, e);
  return e;
}

void SSMLayerParams::validate() const {
  if (A.rows() != A.cols()) throw ShapeError("SSM layer: A must be square");
  if (B.rows() != A.rows()) throw ShapeError("SSM layer: B rows must match A");
  if (C.cols() != A.rows()) throw ShapeError("SSM layer: C columns must match A");
  if (!A.allFinite() || !B.allFinite() || !C.allFinite()) {
    throw NumericError("SSM layer: non-finite parameters");
  }
}

std::pair<Vector, Vector> ssm_layer_step(const SSMLayerParams& params, const Vector& h_prev,
                                         const Vector& u, double delta) {
  params.validate();
  if (h_prev.size() != params.state_size() || u.size() != params.input_size()) {
    throw ShapeError("ssm_layer_step: state or input size mismatch");
  }
  const auto d = discretize_bilinear(params.A, params.B, delta);
  Vector h = d.A_bar * h_prev + d.B_bar * u;
  Vector y = params.C * h;
  return {std::move(h), std::move(y)};
}

std::string to_string(DeltaMode mode) {
  return mode == DeltaMode::RawGap ? "raw_gap" : "learned_scale";
}

DeltaMode delta_mode_from_string(const std::string& s) {
  if (s == "raw_gap") return DeltaMode::RawGap;
  if (s == "learned_scale") return DeltaMode::LearnedScale;
  throw ConfigError("unknown delta mode: " + s);
}

ad::Var ssm_step(const ad::Var& A, const ad::Var& B, const ad::Var& h_prev, const ad::Var& u,
                 std::span<const double> deltas, const ad::Var& log_scale,
                 DiscretizationCache& cache) {
  const auto n = A.rows();
  const auto batch = h_prev.cols();
  if (A.cols() != n || B.rows() != n || h_prev.rows() != n || u.rows() != B.cols() ||
      u.cols() != batch || static_cast<Eigen::Index>(deltas.size()) != batch) {
    throw ShapeError("ssm_step: inconsistent shapes");
  }
  const double scale = log_scale.valid() ? std::exp(log_scale.value()(0, 0)) : 1.0;

  std::vector<std::shared_ptr<const DiscretizationCache::Entry>> per_col(
      static_cast<std::size_t>(batch));
  Matrix h(n, batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    auto e = cache.get(A.value(), B.value(), deltas[static_cast<std::size_t>(j)] * scale);
    h.col(j).noalias() = e->A_bar * h_prev.value().col(j);
    h.col(j).noalias() += e->B_bar * u.value().col(j);
    per_col[static_cast<std::size_t>(j)] = std::move(e);
  }

  ad::Tape& t = A.tape();
  const bool grad = ad::any_needs_grad({A, B, h_prev, u}) ||
                    (log_scale.valid() && log_scale.needs_grad());
  const int ia = A.id(), ib = B.id(), ih = h_prev.id(), iu = u.id();
  const int is = log_scale.valid() ? log_scale.id() : -1;
  const int io = static_cast<int>(t.size());
  return t.push(std::move(h), grad, [=, per_col = std::move(per_col)](ad::Tape& t,
                                                                         const Matrix& g) {
    const Matrix& Av = t.value(ia);
    const Matrix& Bv = t.value(ib);
    const Matrix& hp = t.value(ih);
    const Matrix& uv = t.value(iu);
    const Matrix& hv = t.value(io);
    const bool wantA = t.needs_grad(ia), wantB = t.needs_grad(ib);
    const bool wantH = t.needs_grad(ih), wantU = t.needs_grad(iu);
    const bool wantS = is >= 0 && t.needs_grad(is);

    Matrix gA = wantA ? Matrix::Zero(Av.rows(), Av.cols()) : Matrix();
    Matrix gB = wantB ? Matrix::Zero(Bv.rows(), Bv.cols()) : Matrix();
    Matrix gh = wantH ? Matrix(hp.rows(), hp.cols()) : Matrix();
    Matrix gu = wantU ? Matrix(uv.rows(), uv.cols()) : Matrix();
    double gs = 0.0;
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const auto& e = *per_col[static_cast<std::size_t>(j)];
      const Vector w = e.P_inv.transpose() * g.col(j);
      if (wantH) gh.col(j).noalias() = e.Q.transpose() * w;
      if (wantU) gu.col(j).noalias() = e.delta * (Bv.transpose() * w);
      if (wantA || wantS) {
        const Vector hsum = hp.col(j) + hv.col(j);
        if (wantA) gA.noalias() += (0.5 * e.delta) * w * hsum.transpose();
        if (wantS) gs += e.delta * w.dot(0.5 * (Av * hsum) + Bv * uv.col(j));
      }
      if (wantB) gB.noalias() += e.delta * w * uv.col(j).transpose();
    }
    if (wantA) t.accumulate(ia, gA);
    if (wantB) t.accumulate(ib, gB);
    if (wantH) t.accumulate(ih, gh);
    if (wantU) t.accumulate(iu, gu);
    if (wantS) t.accumulate(is, Matrix::Constant(1, 1, gs));
  });
}

SSMStack::SSMStack(ad::ParameterStore& store, const std::string& name, const SSMStackConfig& config,
                   std::mt19937_64& rng)
    : config_(config) {
  if (config.layers < 1 || config.width < 1 || config.state_size < 1 || config.input_dim < 0) {
    throw ConfigError("SSM stack " + name + ": invalid dimensions");
  }
  input_ = nn::Linear(store, name + "/in", config.input_dim, config.width, rng);
  const int n = config.state_size, h = config.width;
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = name + "/" + std::to_string(l);
    Layer layer;
    layer.A = &store.add(p + "/A", init_hippo(n));
    Matrix b = nn::random_normal(n, h, 1.0 / std::sqrt(static_cast<double>(h)), rng);
    for (int i = 0; i < n; ++i) b.row(i) *= std::sqrt(2.0 * i + 1.0);
    layer.B = &store.add(p + "/B", std::move(b));
    layer.C = &store.add(p + "/C",
                         nn::random_normal(h, n, 1.0 / std::sqrt(static_cast<double>(n)), rng));
    layer.mix = nn::Linear(store, p + "/mix", h, h, rng, 0.5);
    if (config.delta_mode == DeltaMode::LearnedScale) {
      layer.log_scale = &store.add(p + "/log_scale", Matrix::Zero(1, 1));
    }
    layers_.push_back(layer);
  }
}

SSMStack::State SSMStack::initial_state(ad::Tape& tape, Eigen::Index batch) const {
  State s;
  for (const auto& layer : layers_) {
    s.hidden.push_back(tape.constant(Matrix::Zero(layer.A->value.rows(), batch)));
  }
  s.caches.resize(layers_.size());
  return s;
}

ad::Var SSMStack::step(ad::Tape& tape, State& state, const ad::Var& input,
                       std::span<const double> deltas) const {
  if (input.rows() != config_.input_dim) throw ShapeError("SSM stack: input width mismatch");
  if (state.hidden.size() != layers_.size()) throw ShapeError("SSM stack: state/layer mismatch");
  ad::Var x = input_.forward(tape, input);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    ad::Var scale = L.log_scale ? tape.param(*L.log_scale) : ad::Var();
    ad::Var h = ssm_step(tape.param(*L.A), tape.param(*L.B), state.hidden[l], x, deltas, scale,
                         state.caches[l]);
    state.hidden[l] = h;
    ad::Var y = ad::matmul(tape.param(*L.C), h);
    x = ad::add(x, L.mix.forward(tape, ad::gelu(y)));
  }
  return x;
}

std::vector<SSMLayerParams> SSMStack::layer_params() const {
  std::vector<SSMLayerParams> out;
  for (const auto& L : layers_) out.push_back({L.A->value, L.B->value, L.C->value});
  return out;
}

std::vector<Vector> run_ssm_stack(const SSMStack& stack, const std::vector<Vector>& inputs,
                                  const std::vector<double>& deltas) {
  if (inputs.size() != deltas.size()) {
    throw ShapeError("run_ssm_stack: " + std::to_string(inputs.size()) + " inputs vs " +
                     std::to_string(deltas.size()) + " deltas");
  }
  ad::Tape tape(false);
  auto state = stack.initial_state(tape, 1);
  std::vector<Vector> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ad::Var x = tape.constant(inputs[i]);
    ad::Var y = stack.step(tape, state, x, std::span<const double>(&deltas[i], 1));
    out.emplace_back(y.value().col(0));
  }
  return out;
}

}  // namespace physssm
