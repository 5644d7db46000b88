#include "physssm/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "physssm/errors.hpp"

namespace physssm::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

// ---------------------------------------------------------------- parameters

Parameter& ParameterStore::add(std::string name, Matrix init) {
  if (index_.count(name) != 0) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  auto& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = std::move(init);
  p.zero_grad();
  return p;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Eigen::Index ParameterStore::scalar_count() const {
  Eigen::Index n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<Matrix> ParameterStore::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParameterStore::restore(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) throw ShapeError("parameter snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
}

// ---------------------------------------------------------------- tape

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = push(p.value, record_, nullptr);
  nodes_[v.id_].param = &p;
  param_nodes_.emplace(&p, v.id_);
  return v;
}

Var Tape::push(Matrix value, bool needs_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad && record_;
  if (n.needs_grad) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad_slot(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  grad_slot(id) += g;
}

void Tape::accumulate_cols(int id, Eigen::Index first_col, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  grad_slot(id).middleCols(first_col, g.cols()) += g;
}

void Tape::accumulate_rows(int id, Eigen::Index first_row, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  grad_slot(id).middleRows(first_row, g.rows()) += g;
}

void Tape::backward(const Var& loss) {
  if (!record_) throw ConfigError("backward() on a non-recording tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw ShapeError("backward() needs a 1x1 loss");
  if (!needs_grad(loss.id_)) return;
  grad_slot(loss.id_)(0, 0) += 1.0;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.fn) n.fn(*this, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

bool any_needs_grad(std::initializer_list<Var> inputs) {
  for (const auto& v : inputs) {
    if (v.valid() && v.needs_grad()) return true;
  }
  return false;
}

// ---------------------------------------------------------------- ops

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Tape& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() * b.value(), any_needs_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  Tape& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), any_needs_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  Tape& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), any_needs_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  Tape& t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), any_needs_grad({a, b}),
                [ia, ib](Tape& t, const Matrix& g) {
                  if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                  if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                });
}

Var scale(const Var& a, double s) {
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value() * s, any_needs_grad({a}),
                [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_bias(const Var& a, const Var& bias) {
  if (bias.cols() != 1 || bias.rows() != a.rows()) {
    throw ShapeError("add_bias: " + shape_str(a.value()) + " + " + shape_str(bias.value()));
  }
  Tape& t = a.tape();
  const int ia = a.id(), ib = bias.id();
  Matrix out = a.value().colwise() + bias.value().col(0);
  return t.push(std::move(out), any_needs_grad({a, bias}), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Var gelu(const Var& a) {
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().unaryExpr(&gelu_value), any_needs_grad({a}),
                [ia](Tape& t, const Matrix& g) {
                  t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr(&gelu_derivative)));
                });
}

Var exp(const Var& a) {
  Tape& t = a.tape();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());  // id the output will receive
  return t.push(a.value().array().exp().matrix(), any_needs_grad({a}),
                [ia, io](Tape& t, const Matrix& g) {
                  t.accumulate(ia, g.cwiseProduct(t.value(io)));
                });
}

Var clamp(const Var& a, double lo, double hi) {
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().cwiseMax(lo).cwiseMin(hi), any_needs_grad({a}),
                [ia, lo, hi](Tape& t, const Matrix& g) {
                  const Matrix& x = t.value(ia);
                  Matrix gi = g;
                  for (Eigen::Index k = 0; k < x.size(); ++k) {
                    if (x(k) < lo || x(k) > hi) gi(k) = 0.0;
                  }
                  t.accumulate(ia, gi);
                });
}

Var square(const Var& a) {
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().array().square().matrix(), any_needs_grad({a}),
                [ia](Tape& t, const Matrix& g) {
                  t.accumulate(ia, 2.0 * g.cwiseProduct(t.value(ia)));
                });
}

Var sum(const Var& a) {
  Tape& t = a.tape();
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), any_needs_grad({a}), [ia, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var colwise_sum(const Var& a) {
  Tape& t = a.tape();
  const int ia = a.id();
  const auto r = a.rows();
  return t.push(a.value().colwise().sum(), any_needs_grad({a}), [ia, r](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.replicate(r, 1));
  });
}

Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("rows: slice out of range for " + shape_str(a.value()));
  }
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().middleRows(start, count), any_needs_grad({a}),
                [ia, start](Tape& t, const Matrix& g) { t.accumulate_rows(ia, start, g); });
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("cols: slice out of range for " + shape_str(a.value()));
  }
  Tape& t = a.tape();
  const int ia = a.id();
  return t.push(a.value().middleCols(start, count), any_needs_grad({a}),
                [ia, start](Tape& t, const Matrix& g) { t.accumulate_cols(ia, start, g); });
}

Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vcat of nothing");
  Tape& t = parts.front().tape();
  Eigen::Index total = 0;
  bool grad = false;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw ShapeError("vcat: column mismatch");
    total += p.rows();
    grad = grad || p.needs_grad();
  }
  Matrix out(total, parts.front().cols());
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id(), r);
    r += p.rows();
  }
  return t.push(std::move(out), grad, [layout](Tape& t, const Matrix& g) {
    for (const auto& [id, r0] : layout) {
      t.accumulate(id, g.middleRows(r0, t.value(id).rows()));
    }
  });
}

Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hcat of nothing");
  Tape& t = parts.front().tape();
  Eigen::Index total = 0;
  bool grad = false;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw ShapeError("hcat: row mismatch");
    total += p.cols();
    grad = grad || p.needs_grad();
  }
  Matrix out(parts.front().rows(), total);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id(), c);
    c += p.cols();
  }
  return t.push(std::move(out), grad, [layout](Tape& t, const Matrix& g) {
    for (const auto& [id, c0] : layout) {
      t.accumulate(id, g.middleCols(c0, t.value(id).cols()));
    }
  });
}

}  // namespace physssm::ad
