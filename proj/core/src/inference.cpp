#include "cellmr/inference.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "cellmr/errors.hpp"
#include "cellmr/parallel.hpp"
#include "cellmr/rng.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {

const double kSqrt2 = std::sqrt(2.0);

bool all_finite(const ThetaVector& t) {
  return t.mu.allFinite() && t.sigma_vechs.allFinite();
}

}  // namespace

Vector vech_s(const Matrix& sigma) {
  const long d = sigma.rows();
  if (sigma.cols() != d) throw DimensionMismatchError("vech_s: matrix not square");
  Vector v(d * (d + 1) / 2);
  long idx = 0;
  for (long j = 0; j < d; ++j)
    for (long i = j; i < d; ++i) v[idx++] = i == j ? sigma(i, j) : kSqrt2 * sigma(i, j);
  return v;
}

Matrix vech_s_inverse(const Vector& v, long d) {
  if (v.size() != d * (d + 1) / 2)
    throw DimensionMismatchError("vech_s_inverse: length does not match dimension");
  Matrix sigma(d, d);
  long idx = 0;
  for (long j = 0; j < d; ++j) {
    for (long i = j; i < d; ++i) {
      const double s = i == j ? v[idx] : v[idx] / kSqrt2;
      sigma(i, j) = s;
      sigma(j, i) = s;
      ++idx;
    }
  }
  return sigma;
}

double ThetaVector::norm() const {
  return std::sqrt(mu.squaredNorm() + sigma_vechs.squaredNorm());
}

ThetaVector theta_from_moments(const Vector& mu, const Matrix& sigma) {
  if (sigma.rows() != mu.size())
    throw DimensionMismatchError("theta_from_moments: shapes disagree");
  return ThetaVector{mu, vech_s(sigma)};
}

Matrix sigma_from_theta(const ThetaVector& theta) {
  return vech_s_inverse(theta.sigma_vechs, theta.dim());
}

ThetaSpace ThetaSpace::around(const Vector& mu, const Matrix& sigma) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  if (es.info() != Eigen::Success)
    throw NonFiniteInputError("theta space: eigendecomposition failed");
  ThetaSpace s;
  s.M = 10.0 * (mu.norm() + 1.0);
  s.c_lo = std::max(es.eigenvalues().minCoeff() / 100.0, 1e-6);
  s.c_hi = std::max(100.0 * es.eigenvalues().maxCoeff(), s.c_lo);
  return s;
}

bool ThetaSpace::contains(const ThetaVector& theta, double tol) const {
  if (theta.mu.norm() > M + tol) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma_from_theta(theta));
  if (es.info() != Eigen::Success) return false;
  return es.eigenvalues().minCoeff() >= c_lo - tol &&
         es.eigenvalues().maxCoeff() <= c_hi + tol;
}

ThetaVector project_theta(const ThetaSpace& space, const ThetaVector& theta) {
  if (!all_finite(theta))
    throw NonFiniteInputError("project_theta: non-finite parameter");
  ThetaVector out = theta;
  bool changed = false;
  const double norm = out.mu.norm();
  if (norm > space.M) {
    out.mu *= space.M / norm;
    changed = true;
  }
  const Matrix sigma = sigma_from_theta(out);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  if (es.info() != Eigen::Success)
    throw NonFiniteInputError("project_theta: eigendecomposition failed");
  Vector ev = es.eigenvalues();
  bool clipped = false;
  for (long i = 0; i < ev.size(); ++i) {
    const double c = std::min(std::max(ev[i], space.c_lo), space.c_hi);
    if (c != ev[i]) {
      ev[i] = c;
      clipped = true;
    }
  }
  if (clipped) {
    out.sigma_vechs =
        vech_s(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    changed = true;
  }
  return changed ? out : theta;
}

IndirectResult indirect_estimate(const PiBarFn& pibar, const ThetaVector& pi_hat,
                                 const ThetaSpace& space, const IndirectOptions& opts) {
  if (!all_finite(pi_hat))
    throw NonFiniteInputError("indirect_estimate: non-finite auxiliary estimate");
  const double tol = opts.tol_scale * (1.0 + pi_hat.norm());
  IndirectResult res;
  res.theta = project_theta(space, pi_hat);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const ThetaVector bar = pibar(res.theta);
    if (!all_finite(bar))
      throw NonFiniteIterateError("indirect_estimate: auxiliary map returned non-finite values");
    ThetaVector next;
    next.mu = pi_hat.mu + res.theta.mu - bar.mu;
    next.sigma_vechs = pi_hat.sigma_vechs + res.theta.sigma_vechs - bar.sigma_vechs;
    next = project_theta(space, next);
    const double step = std::sqrt((next.mu - res.theta.mu).squaredNorm() +
                                  (next.sigma_vechs - res.theta.sigma_vechs).squaredNorm());
    res.theta = std::move(next);
    res.iterations = it;
    if (step < tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

PiBarFn make_pibar(const FastCellCovModel& aux, long n, int H, std::uint64_t seed) {
  if (H < 1) throw InvalidConfigError("make_pibar: H must be >= 1");
  if (n < 2) throw InvalidConfigError("make_pibar: n must be >= 2");
  const long d = aux.dim();
  // Common random numbers: one block of standard normal draws shared by
  // every theta this map is called with.
  auto draws = std::make_shared<std::vector<Matrix>>();
  draws->reserve(static_cast<std::size_t>(H));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int h = 0; h < H; ++h) {
    auto rng = make_rng(seed, "pibar_u", static_cast<std::uint64_t>(h));
    Matrix u(n, d);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < d; ++j) u(i, j) = gauss(rng);
    draws->push_back(std::move(u));
  }
  return [aux, draws, n, H, d](const ThetaVector& theta) -> ThetaVector {
    Matrix sigma = sigma_from_theta(theta);
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() != Eigen::Success) {
      sigma += 1e-10 * std::max(1.0, sigma.trace() / d) * Matrix::Identity(d, d);
      llt.compute(sigma);
      if (llt.info() != Eigen::Success)
        throw NonFiniteIterateError("pibar: scatter not positive definite");
    }
    const Matrix chol_t = Matrix(llt.matrixL()).transpose();
    Vector mu_acc = Vector::Zero(d);
    Vector vech_acc = Vector::Zero(d * (d + 1) / 2);
    for (int h = 0; h < H; ++h) {
      Matrix values = (*draws)[static_cast<std::size_t>(h)] * chol_t;
      values.rowwise() += theta.mu.transpose();
      const FastCovEstimate est =
          fastcellcov_evaluate(aux, DataMatrix::complete(values));
      mu_acc += est.mu;
      vech_acc += vech_s(est.sigma);
    }
    return ThetaVector{mu_acc / H, vech_acc / H};
  };
}

Vector contrast_intercept(long p, long q, long j) {
  if (j < 0 || j >= q) throw InvalidConfigError("contrast: response index out of range");
  Vector a = Vector::Zero(q + p * q);
  a[j] = 1.0;
  return a;
}

Vector contrast_coef(long p, long q, long j, long l) {
  if (j < 0 || j >= p || l < 0 || l >= q)
    throw InvalidConfigError("contrast: coefficient index out of range");
  Vector a = Vector::Zero(q + p * q);
  a[q + l * p + j] = 1.0;
  return a;
}

BootstrapResult cellboot(const DataMatrix& x, const DataMatrix& y,
                         const RegressionModel& model,
                         const std::vector<Vector>& contrasts,
                         const BootstrapOptions& opts) {
  if (opts.B < 1) throw InvalidConfigError("cellboot: B must be >= 1");
  if (!(opts.level > 0.0 && opts.level < 1.0))
    throw InvalidConfigError("cellboot: level must be in (0, 1)");
  if (x.cols() != model.p || y.cols() != model.q)
    throw DimensionMismatchError("cellboot: data shape differs from model");
  const long p = model.p, q = model.q;
  const long n_coef = q + p * q;
  for (const Vector& a : contrasts)
    if (a.size() != n_coef)
      throw DimensionMismatchError("cellboot: contrast length must be q + p*q");

  const DataMatrix joint = hstack(x, y);
  joint.validate();
  const long n = joint.rows();
  const ThetaSpace space = ThetaSpace::around(model.cov.mu, model.cov.sigma);

  struct Attempt {
    ThetaVector theta;
    Vector coef;
    bool ok = false;
  };

  auto run_attempt = [&](std::uint64_t a) {
    Attempt out;
    auto rng = make_rng(opts.seed, "boot", a);
    std::uniform_int_distribution<long> pick(0, n - 1);
    std::vector<long> idx(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = pick(rng);
    try {
      const DataMatrix sample = joint.select_rows(idx);
      const FastCovEstimate aux = fastcellcov_evaluate(model.fastcov, sample);
      const ThetaVector pi_star = theta_from_moments(aux.mu, aux.sigma);
      const PiBarFn pibar = make_pibar(model.fastcov, n, opts.H,
                                       derive_seed(opts.seed, "iiu", a));
      const IndirectResult ii = indirect_estimate(pibar, pi_star, space, opts.indirect);
      const Matrix sigma_b = sigma_from_theta(ii.theta);
      const PluginFit fit =
          plugin_fit(ii.theta.mu, sigma_b, p, q, model.lambda, opts.cond_limit);
      out.coef.resize(n_coef);
      out.coef.head(q) = fit.b;
      for (long l = 0; l < q; ++l) out.coef.segment(q + l * p, p) = fit.B.col(l);
      if (!out.coef.allFinite()) return out;
      out.theta = ii.theta;
      out.ok = true;
    } catch (const Error&) {
      out.ok = false;
    }
    return out;
  };

  BootstrapResult res;
  res.level = opts.level;
  res.B = opts.B;
  res.H = opts.H;
  res.seed = opts.seed;
  res.coef_samples.resize(opts.B, static_cast<long>(contrasts.size()));
  res.theta_samples.reserve(static_cast<std::size_t>(opts.B));

  const std::uint64_t max_attempts = 2 * static_cast<std::uint64_t>(opts.B);
  std::uint64_t next_attempt = 0;
  long accepted = 0;
  while (accepted < opts.B && next_attempt < max_attempts) {
    const std::uint64_t wave =
        std::min<std::uint64_t>(static_cast<std::uint64_t>(opts.B - accepted),
                                max_attempts - next_attempt);
    std::vector<Attempt> results(static_cast<std::size_t>(wave));
    parallel_for(static_cast<long>(wave), opts.threads, [&](long w) {
      results[static_cast<std::size_t>(w)] =
          run_attempt(next_attempt + static_cast<std::uint64_t>(w));
    });
    for (auto& r : results) {
      if (r.ok && accepted < opts.B) {
        Vector coefs(static_cast<long>(contrasts.size()));
        for (std::size_t c = 0; c < contrasts.size(); ++c)
          coefs[static_cast<long>(c)] = contrasts[c].dot(r.coef);
        res.coef_samples.row(accepted) = coefs.transpose();
        res.theta_samples.push_back(std::move(r.theta));
        ++accepted;
      } else if (!r.ok) {
        ++res.failures;
      }
    }
    next_attempt += wave;
  }
  if (accepted < opts.B)
    throw Error("cellboot: more than half of the replicate attempts failed");

  const double alpha = 1.0 - opts.level;
  res.lower.resize(static_cast<long>(contrasts.size()));
  res.upper.resize(static_cast<long>(contrasts.size()));
  for (long c = 0; c < static_cast<long>(contrasts.size()); ++c) {
    std::vector<double> s(static_cast<std::size_t>(opts.B));
    for (int b = 0; b < opts.B; ++b) s[static_cast<std::size_t>(b)] = res.coef_samples(b, c);
    res.lower[c] = quantile_ceil(s, alpha / 2.0);
    res.upper[c] = quantile_ceil(s, 1.0 - alpha / 2.0);
  }
  return res;
}

void write_bootstrap_samples(const std::string& path, const BootstrapResult& result,
                             long contrast_index) {
  if (contrast_index < 0 || contrast_index >= result.coef_samples.cols())
    throw InvalidConfigError("bootstrap samples: contrast index out of range");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "replicate,value\n";
  for (long b = 0; b < result.coef_samples.rows(); ++b)
    out << (b + 1) << ',' << result.coef_samples(b, contrast_index) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_bootstrap_summary(const std::string& path, const BootstrapResult& result,
                             const std::vector<std::string>& contrast_names) {
  if (static_cast<long>(contrast_names.size()) != result.lower.size())
    throw DimensionMismatchError("bootstrap summary: name count mismatch");
  nlohmann::json j;
  j["level"] = result.level;
  j["B"] = result.B;
  j["H"] = result.H;
  j["seed"] = result.seed;
  j["failures"] = result.failures;
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t c = 0; c < contrast_names.size(); ++c) {
    const long idx = static_cast<long>(c);
    arr.push_back({{"contrast", contrast_names[c]},
                   {"lower", result.lower[idx]},
                   {"upper", result.upper[idx]}});
  }
  j["intervals"] = std::move(arr);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace cellmr
