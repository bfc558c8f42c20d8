#include "cellmr/mcd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellmr/errors.hpp"
#include "cellmr/mkernel.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {

struct SubsetStats {
  Vector mu;
  Matrix cov;  // ML covariance (divisor h)
};

SubsetStats subset_stats(const Matrix& X, const std::vector<long>& subset) {
  const long k = X.cols();
  const double h = static_cast<double>(subset.size());
  SubsetStats s;
  s.mu = Vector::Zero(k);
  for (long idx : subset) s.mu += X.row(idx).transpose();
  s.mu /= h;
  s.cov = Matrix::Zero(k, k);
  for (long idx : subset) {
    const Vector c = X.row(idx).transpose() - s.mu;
    s.cov.noalias() += c * c.transpose();
  }
  s.cov /= h;
  return s;
}

// log det via LDLT; -inf when not positive definite.
double log_det(const Matrix& S) {
  Eigen::LDLT<Matrix> ldlt(S);
  if (ldlt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (long i = 0; i < S.rows(); ++i) {
    const double d = ldlt.vectorD()[i];
    if (!(d > 0.0)) return -std::numeric_limits<double>::infinity();
    acc += std::log(d);
  }
  return acc;
}

// Squared Mahalanobis distances, ridge damping sigma if necessary.
Vector mahalanobis_sq(const Matrix& X, const Vector& mu, Matrix sigma,
                      bool* damped = nullptr) {
  const long k = X.cols();
  Eigen::LDLT<Matrix> ldlt(sigma);
  bool ok = ldlt.info() == Eigen::Success;
  if (ok)
    for (long i = 0; i < k; ++i) ok = ok && ldlt.vectorD()[i] > 0.0;
  if (!ok) {
    const double ridge = 1e-8 * std::max(1.0, sigma.trace() / k);
    sigma += ridge * Matrix::Identity(k, k);
    ldlt.compute(sigma);
    if (damped) *damped = true;
  }
  Vector d2(X.rows());
  for (long i = 0; i < X.rows(); ++i) {
    const Vector c = X.row(i).transpose() - mu;
    d2[i] = c.dot(ldlt.solve(c));
  }
  return d2;
}

// h indices with smallest distance; ties resolved by index order.
std::vector<long> smallest_h(const Vector& d2, long h) {
  std::vector<long> idx(d2.size());
  std::iota(idx.begin(), idx.end(), 0L);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](long a, long b) { return d2[a] < d2[b]; });
  idx.resize(h);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Pearson correlation matrix of complete columns.
Matrix pearson_corr(const Matrix& Y) {
  const long n = Y.rows(), k = Y.cols();
  Matrix C = Y.rowwise() - Y.colwise().mean();
  Matrix S = (C.transpose() * C) / static_cast<double>(n);
  Vector sd = S.diagonal().cwiseMax(1e-300).cwiseSqrt();
  Matrix R(k, k);
  for (long a = 0; a < k; ++a)
    for (long b = 0; b < k; ++b) R(a, b) = S(a, b) / (sd[a] * sd[b]);
  return R;
}

Matrix column_ranks(const Matrix& X) {
  const long n = X.rows(), k = X.cols();
  Matrix R(n, k);
  std::vector<long> ord(n);
  for (long j = 0; j < k; ++j) {
    std::iota(ord.begin(), ord.end(), 0L);
    std::stable_sort(ord.begin(), ord.end(),
                     [&](long a, long b) { return X(a, j) < X(b, j); });
    long i = 0;
    while (i < n) {
      long e = i;
      while (e + 1 < n && X(ord[e + 1], j) == X(ord[i], j)) ++e;
      const double avg = 0.5 * static_cast<double>(i + e) + 1.0;
      for (long t = i; t <= e; ++t) R(ord[t], j) = avg;
      i = e + 1;
    }
  }
  return R;
}

// Turns an initial correlation-like scatter into a proper (location,
// scatter) pair: rescale eigen directions by robust scales of the
// projected data, then take coordinatewise medians in that basis.
void refine_start(const Matrix& Z, const Matrix& S0, Vector& mu, Matrix& sigma) {
  const long k = Z.cols();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (S0 + S0.transpose()));
  const Matrix Q = es.eigenvectors();
  const Matrix B = Z * Q;
  Vector lam(k);
  std::vector<double> col(Z.rows());
  for (long c = 0; c < k; ++c) {
    for (long i = 0; i < Z.rows(); ++i) col[i] = B(i, c);
    const double med = median(col);
    for (double& v : col) v -= med;
    const MScaleResult ms = mscale(col);
    double s = ms.degenerate ? 0.0 : ms.sigma;
    if (!(s > 0.0)) s = 1e-8;
    lam[c] = s * s;
  }
  sigma = Q * lam.asDiagonal() * Q.transpose();
  // location: medians in the sphered basis, mapped back
  Matrix W = B * lam.cwiseSqrt().cwiseInverse().asDiagonal();
  Vector medw(k);
  for (long c = 0; c < k; ++c) {
    for (long i = 0; i < Z.rows(); ++i) col[i] = W(i, c);
    medw[c] = median(col);
  }
  mu = Q * lam.cwiseSqrt().asDiagonal() * medw;
}

}  // namespace

double mcd_consistency_factor(double alpha, int k) {
  if (alpha >= 1.0) return 1.0;
  const double q = chi2_quantile(alpha, static_cast<double>(k));
  return alpha / chi2_cdf(q, static_cast<double>(k + 2));
}

std::vector<long> c_step(const Matrix& points, const std::vector<long>& subset) {
  if (subset.empty()) throw EmptyInputError("c_step: empty subset");
  const SubsetStats s = subset_stats(points, subset);
  const Vector d2 = mahalanobis_sq(points, s.mu, s.cov);
  return smallest_h(d2, static_cast<long>(subset.size()));
}

McdEstimate mcd_fit(const Matrix& points, const McdOptions& opts) {
  const long n = points.rows(), k = points.cols();
  if (n == 0 || k == 0) throw EmptyInputError("mcd_fit: empty input");
  if (!points.allFinite()) throw NonFiniteInputError("mcd_fit: non-finite input");
  if (!(opts.alpha > 0.5) || !(opts.alpha <= 1.0))
    throw InvalidConfigError("mcd_fit: alpha must lie in (0.5, 1]");
  if (opts.alpha * static_cast<double>(n) <= static_cast<double>(k + 1))
    throw TooFewPointsError("mcd_fit: alpha * n <= k + 1");
  const long h = static_cast<long>(std::ceil(opts.alpha * static_cast<double>(n)));

  McdEstimate best;
  if (h >= n) {
    best.subset.resize(n);
    std::iota(best.subset.begin(), best.subset.end(), 0L);
  } else {
    // Coordinatewise robust standardization; determinant ordering of
    // subsets is invariant under this diagonal rescaling.
    Vector med(k), sc(k);
    std::vector<double> col(n);
    for (long j = 0; j < k; ++j) {
      for (long i = 0; i < n; ++i) col[i] = points(i, j);
      med[j] = median(col);
      for (double& v : col) v -= med[j];
      const MScaleResult ms = mscale(col);
      sc[j] = (ms.degenerate || !(ms.sigma > 0.0)) ? 1.0 : ms.sigma;
    }
    Matrix Z = (points.rowwise() - med.transpose()) * sc.cwiseInverse().asDiagonal();

    // Six deterministic initial scatter shapes.
    std::vector<Matrix> starts;
    starts.push_back(pearson_corr(Z.unaryExpr([](double v) { return std::tanh(v); })));
    starts.push_back(pearson_corr(column_ranks(Z)));
    {
      Matrix R = column_ranks(Z);
      const double nn = static_cast<double>(n);
      Matrix T = R.unaryExpr(
          [nn](double r) { return normal_quantile((r - 1.0 / 3.0) / (nn + 1.0 / 3.0)); });
      starts.push_back(pearson_corr(T));
    }
    {
      Matrix S = Matrix::Zero(k, k);
      for (long i = 0; i < n; ++i) {
        const double nrm = Z.row(i).norm();
        if (nrm > 0.0) S.noalias() += (Z.row(i).transpose() * Z.row(i)) / (nrm * nrm);
      }
      starts.push_back(S / static_cast<double>(n));
    }
    {
      Vector norms = Z.rowwise().norm();
      const std::vector<long> core =
          smallest_h(norms, std::max<long>(k + 1, (n + 1) / 2));
      const SubsetStats s = subset_stats(Z, core);
      starts.push_back(s.cov);
    }
    starts.push_back(pearson_corr(Z));

    double best_ld = std::numeric_limits<double>::infinity();
    for (const Matrix& S0 : starts) {
      Vector mu0;
      Matrix sig0;
      refine_start(Z, S0, mu0, sig0);
      std::vector<long> subset = smallest_h(mahalanobis_sq(Z, mu0, sig0), h);
      double ld = log_det(subset_stats(Z, subset).cov);
      for (int step = 0; step < opts.max_csteps; ++step) {
        std::vector<long> next = c_step(Z, subset);
        const double ld_next = log_det(subset_stats(Z, next).cov);
        const bool same = next == subset;
        subset = std::move(next);
        ld = ld_next;
        if (same || !std::isfinite(ld)) break;
      }
      if (ld < best_ld - 1e-12) {
        best_ld = ld;
        best.subset = subset;
      } else if (best.subset.empty()) {
        best.subset = subset;
        best_ld = ld;
      }
    }
  }

  const SubsetStats s = subset_stats(points, best.subset);
  best.mu = s.mu;
  best.log_det_raw = log_det(s.cov);
  best.consistency = mcd_consistency_factor(opts.alpha, static_cast<int>(k));
  best.sigma = best.consistency * s.cov;
  if (!std::isfinite(best.log_det_raw)) {
    best.singular = true;
    const double ridge = 1e-8 * std::max(1.0, best.sigma.trace() / k);
    best.sigma += ridge * Matrix::Identity(k, k);
  }
  return best;
}

}  // namespace cellmr
