#include "physssm/objective.hpp"

#include <cmath>

#include "physssm/errors.hpp"

namespace physssm {

namespace {
constexpr double kCosineEps = 1e-12;
}

void GaussianSeq::validate() const {
  if (means.size() != stds.size() || (!times.empty() && times.size() != means.size())) {
    throw ShapeError("GaussianSeq: sequence lengths differ");
  }
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (means[i].size() != stds[i].size()) throw ShapeError("GaussianSeq: mean/std size");
    if (!(stds[i].array() >= 0.0).all() || !stds[i].allFinite()) {
      throw NumericError("GaussianSeq: negative or non-finite std at step " + std::to_string(i));
    }
  }
}

std::string to_string(RegMetric metric) {
  switch (metric) {
    case RegMetric::Euclidean: return "euclidean";
    case RegMetric::Chebyshev: return "chebyshev";
    case RegMetric::Cosine: return "cosine";
  }
  return "euclidean";
}

RegMetric reg_metric_from_string(const std::string& s) {
  if (s == "euclidean") return RegMetric::Euclidean;
  if (s == "chebyshev") return RegMetric::Chebyshev;
  if (s == "cosine") return RegMetric::Cosine;
  throw ConfigError("unknown regularizer metric: " + s);
}

double kl_gaussian_diag(const Vector& q_mean, const Vector& q_std, const Vector& p_mean,
                        const Vector& p_std) {
  const auto n = q_mean.size();
  if (q_std.size() != n || p_mean.size() != n || p_std.size() != n) {
    throw ShapeError("kl_gaussian_diag: dimension mismatch");
  }
  if (!(q_std.array() > 0).all() || !(p_std.array() > 0).all()) {
    throw NumericError("kl_gaussian_diag: standard deviations must be positive");
  }
  const auto vq = q_std.array().square();
  const auto vp = p_std.array().square();
  const auto diff = (q_mean - p_mean).array().square();
  return ((p_std.array() / q_std.array()).log() + (vq + diff) / (2.0 * vp) - 0.5).sum();
}

double kl_gaussian_diag(const GaussianSeq& q, const GaussianSeq& p) {
  if (q.size() != p.size()) throw ShapeError("kl_gaussian_diag: sequence lengths differ");
  if (q.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    total += kl_gaussian_diag(q.means[i], q.stds[i], p.means[i], p.stds[i]);
  }
  return total / static_cast<double>(q.size());
}

double reg_distance(const Vector& a, const Vector& b, RegMetric metric) {
  if (a.size() != b.size()) throw ShapeError("reg_distance: dimension mismatch");
  switch (metric) {
    case RegMetric::Euclidean: return (a - b).squaredNorm();
    case RegMetric::Chebyshev: return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
    case RegMetric::Cosine: return 1.0 - a.dot(b) / (a.norm() * b.norm() + kCosineEps);
  }
  return 0.0;
}

double physics_state_reg(const std::vector<Vector>& prior_samples,
                         const std::vector<Vector>& post_samples, RegMetric metric) {
  if (prior_samples.size() != post_samples.size()) {
    throw ShapeError("physics_state_reg: " + std::to_string(prior_samples.size()) +
                     " prior vs " + std::to_string(post_samples.size()) + " posterior steps");
  }
  if (prior_samples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < prior_samples.size(); ++i) {
    total += reg_distance(prior_samples[i], post_samples[i], metric);
  }
  return total / static_cast<double>(prior_samples.size());
}

double gaussian_recon(const Vector& x, const Vector& x_hat) {
  if (x.size() != x_hat.size()) throw ShapeError("gaussian_recon: dimension mismatch");
  return 0.5 * (x - x_hat).squaredNorm();
}

LossBreakdown total_loss(double recon, double kl, double reg, double beta, double lambda) {
  for (double v : {recon, kl, reg, beta, lambda}) {
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite input");
  }
  LossBreakdown b;
  b.recon = recon;
  b.kl = kl;
  b.reg = reg;
  b.beta = beta;
  b.lambda = lambda;
  b.total = recon + beta * kl + lambda * reg;
  return b;
}

namespace ad {

Var kl_diag(const Var& q_mean, const Var& q_log_std, const Var& p_mean, const Var& p_log_std) {
  // log sp - log sq + (sq^2 + (mq - mp)^2) / (2 sp^2) - 1/2, summed over rows.
  const Var diff = sub(q_mean, p_mean);
  const Var inv_vp = exp(scale(p_log_std, -2.0));
  const Var vq = exp(scale(q_log_std, 2.0));
  const Var quad = mul(add(vq, square(diff)), inv_vp);
  const Var per = add(sub(p_log_std, q_log_std), scale(quad, 0.5));
  const auto rows_count = static_cast<double>(q_mean.rows());
  const Var summed = colwise_sum(per);
  Tape& t = summed.tape();
  const int is = summed.id();
  Matrix out = summed.value().array() - 0.5 * rows_count;
  return t.push(std::move(out), summed.needs_grad(),
                [is](Tape& t, const Matrix& g) { t.accumulate(is, g); });
}

Var reg_distance(const Var& a, const Var& b, RegMetric metric) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("reg_distance: shapes");
  if (metric == RegMetric::Euclidean) return colwise_sum(square(sub(a, b)));

  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const auto n = av.cols();
  Tape& t = a.tape();
  const int ia = a.id(), ib = b.id();

  if (metric == RegMetric::Chebyshev) {
    Matrix out(1, n);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(n), 0);
    std::vector<double> sign(static_cast<std::size_t>(n), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector d = av.col(j) - bv.col(j);
      Eigen::Index k = 0;
      out(0, j) = d.size() == 0 ? 0.0 : d.cwiseAbs().maxCoeff(&k);
      arg[static_cast<std::size_t>(j)] = k;
      sign[static_cast<std::size_t>(j)] = d.size() == 0 ? 0.0 : (d(k) > 0 ? 1.0 : (d(k) < 0 ? -1.0 : 0.0));
    }
    return t.push(std::move(out), any_needs_grad({a, b}),
                  [ia, ib, arg, sign](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value(ia);
                    Matrix ga = Matrix::Zero(av.rows(), av.cols());
                    for (Eigen::Index j = 0; j < av.cols(); ++j) {
                      const auto s = static_cast<std::size_t>(j);
                      if (av.rows() > 0) ga(arg[s], j) = sign[s] * g(0, j);
                    }
                    t.accumulate(ia, ga);
                    t.accumulate(ib, -ga);
                  });
  }

  Matrix out(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out(0, j) = 1.0 - av.col(j).dot(bv.col(j)) / (av.col(j).norm() * bv.col(j).norm() + kCosineEps);
  }
  return t.push(std::move(out), any_needs_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    Matrix ga(av.rows(), av.cols());
    Matrix gb(bv.rows(), bv.cols());
    for (Eigen::Index j = 0; j < av.cols(); ++j) {
      const Vector x = av.col(j), y = bv.col(j);
      const double nx = x.norm(), ny = y.norm();
      const double s = x.dot(y);
      const double D = nx * ny + kCosineEps;
      const Vector ux = nx > 0 ? Vector(x / nx) : Vector::Zero(x.size());
      const Vector uy = ny > 0 ? Vector(y / ny) : Vector::Zero(y.size());
      // d = 1 - s / D
      ga.col(j) = -g(0, j) * (y / D - (s / (D * D)) * ny * ux);
      gb.col(j) = -g(0, j) * (x / D - (s / (D * D)) * nx * uy);
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
}

}  // namespace ad
}  // namespace physssm
