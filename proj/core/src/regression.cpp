#include "cellmr/regression.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellmr/errors.hpp"
#include "cellmr/parallel.hpp"
#include "cellmr/rng.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {

int predictor_rank(int k, long n, long p) {
  long kx = std::min<long>(k, p - 1);
  kx = std::min(kx, n - 1);
  return static_cast<int>(std::max<long>(kx, 0));
}

Matrix predict_with(const Standardizer& x_std, const CellPcaModel& x_pca,
                    const Matrix& B, const Vector& b, const DataMatrix& x) {
  const long n = x.rows(), p = x.cols(), q = b.size();
  if (p != x_std.cols())
    throw DimensionMismatchError("predict: predictor dimension differs from model");
  Matrix yhat(n, q);
  std::vector<std::uint8_t> mask(p);
  Vector z(p);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < p; ++j) {
      mask[j] = x.mask(i, j);
      z[j] = mask[j] ? x.values(i, j) / x_std.scales[j] : 0.0;
    }
    const ImputeResult imp = impute_point(x_pca, z, mask);
    const Vector x_imp = imp.x_imp.cwiseProduct(x_std.scales);
    yhat.row(i) = (b + B.transpose() * x_imp).transpose();
  }
  return yhat;
}

}  // namespace

PluginFit plugin_fit(const Vector& mu, const Matrix& sigma, long p, long q,
                     double lambda, double cond_limit) {
  if (mu.size() != p + q || sigma.rows() != p + q || sigma.cols() != p + q)
    throw DimensionMismatchError("plugin_fit: joint estimate has wrong dimension");
  if (lambda < 0.0) throw InvalidConfigError("plugin_fit: negative ridge penalty");
  const Matrix sigma_x = sigma.topLeftCorner(p, p);
  const Matrix sigma_xy = sigma.topRightCorner(p, q);
  const Matrix sigma_y = sigma.bottomRightCorner(q, q);

  Matrix A = sigma_x + lambda * Matrix::Identity(p, p);
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  const Vector ev = es.eigenvalues();
  const double lo = ev.minCoeff(), hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > cond_limit)
    throw SingularSystemError("plugin_fit: predictor scatter is ill conditioned");

  const Matrix Ainv =
      es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  PluginFit out;
  out.B = Ainv * sigma_xy;
  out.b = mu.tail(q) - out.B.transpose() * mu.head(p);
  Matrix se = sigma_y - sigma_xy.transpose() * Ainv * sigma_xy;
  out.sigma_eps = 0.5 * (se + se.transpose());
  return out;
}

RegressionFitResult cellmr_fit(const DataMatrix& x, const DataMatrix& y, int k,
                               double lambda, const RegressionOptions& opts) {
  x.validate();
  y.validate();
  const long p = x.cols(), q = y.cols(), n = x.rows();
  DataMatrix joint_data = hstack(x, y);

  RegressionFitResult out;
  out.joint = cellcov(joint_data, k, opts.cov);
  const PluginFit plug =
      plugin_fit(out.joint.cov.mu, out.joint.cov.sigma, p, q, lambda, opts.cond_limit);

  auto [xz, x_std] = standardize(x, opts.cov.pca.chi);
  out.x_fit = cellpca_fit(xz, predictor_rank(k, n, p), opts.cov.pca);

  RegressionModel& m = out.model;
  m.p = static_cast<int>(p);
  m.q = static_cast<int>(q);
  m.k = k;
  m.lambda = lambda;
  m.B = plug.B;
  m.b = plug.b;
  m.sigma_eps = plug.sigma_eps;
  m.cov = out.joint.cov;
  m.joint_pca = out.joint.pca.model;
  m.x_std = x_std;
  m.x_pca = out.x_fit.model;
  m.fastcov = fastcellcov_train(joint_data, out.joint);
  m.x_names = x.column_names;
  m.y_names = y.column_names;
  return out;
}

Matrix cellmr_predict(const RegressionModel& model, const DataMatrix& x) {
  x.validate();
  return predict_with(model.x_std, model.x_pca, model.B, model.b, x);
}

Matrix impute_predictors(const RegressionModel& model, const DataMatrix& x) {
  x.validate();
  const long n = x.rows(), p = x.cols();
  Matrix out(n, p);
  std::vector<std::uint8_t> mask(p);
  Vector z(p);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < p; ++j) {
      mask[j] = x.mask(i, j);
      z[j] = mask[j] ? x.values(i, j) / model.x_std.scales[j] : 0.0;
    }
    const ImputeResult imp = impute_point(model.x_pca, z, mask);
    out.row(i) = imp.x_imp.cwiseProduct(model.x_std.scales).transpose();
  }
  return out;
}

PluginFit classical_fit(const DataMatrix& x, const DataMatrix& y, double lambda,
                        double cond_limit) {
  const DataMatrix joint = hstack(x, y);
  joint.validate();
  const long n = joint.rows(), d = joint.cols();
  if (n < 2) throw TooFewPointsError("classical_fit: need at least two rows");
  Vector mu = Vector::Zero(d);
  for (long j = 0; j < d; ++j) {
    double s = 0.0;
    long cnt = 0;
    for (long i = 0; i < n; ++i) {
      if (!joint.observed(i, j)) continue;
      s += joint.values(i, j);
      ++cnt;
    }
    if (cnt == 0) throw DegenerateColumnError("classical_fit: column has no observed cells",
                                              static_cast<int>(j));
    mu[j] = s / static_cast<double>(cnt);
  }
  Matrix centered(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      centered(i, j) = joint.observed(i, j) ? joint.values(i, j) - mu[j] : 0.0;
  const Matrix sigma = centered.transpose() * centered / static_cast<double>(n - 1);
  return plugin_fit(mu, sigma, x.cols(), y.cols(), lambda, cond_limit);
}

std::vector<int> default_k_grid(long n, long d) {
  const long kmax = std::min<long>({10, d - 1, n - 1});
  std::vector<int> grid;
  for (long k = 1; k <= kmax; ++k) grid.push_back(static_cast<int>(k));
  if (grid.empty()) grid.push_back(0);
  return grid;
}

std::vector<double> default_lambda_grid(const Matrix& sigma_x, long p,
                                        double cond_threshold) {
  const double base = sigma_x.trace() / static_cast<double>(p);
  std::vector<double> grid;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma_x);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (lo > 0.0 && hi / lo < cond_threshold) grid.push_back(0.0);
  for (int i = 0; i < 10; ++i) {
    const double expo = -4.0 + 6.0 * static_cast<double>(i) / 9.0;
    grid.push_back(std::pow(10.0, expo) * base);
  }
  return grid;
}

CvReport cross_validate(const DataMatrix& x, const DataMatrix& y,
                        const std::vector<int>& k_grid,
                        const std::vector<double>& lambda_grid, int n_folds,
                        std::uint64_t seed, const RegressionOptions& opts,
                        unsigned threads) {
  x.validate();
  y.validate();
  const long n = x.rows(), p = x.cols(), q = y.cols();
  if (k_grid.empty() || lambda_grid.empty())
    throw InvalidConfigError("cross_validate: empty parameter grid");
  if (n_folds < 2 || n_folds > n)
    throw InvalidConfigError("cross_validate: fold count must lie in [2, n]");
  // Ascending grids make the strict-minimum scan break ties toward the
  // smaller rank and then the smaller penalty.
  std::vector<int> k_sorted = k_grid;
  std::vector<double> lambda_sorted = lambda_grid;
  std::sort(k_sorted.begin(), k_sorted.end());
  std::sort(lambda_sorted.begin(), lambda_sorted.end());

  // Seeded shuffle, cut into contiguous blocks.
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  auto rng = make_rng(seed, "cv_shuffle");
  std::shuffle(order.begin(), order.end(), rng);
  CvReport report;
  report.k_grid = k_sorted;
  report.lambda_grid = lambda_sorted;
  report.fold_assignment.assign(n, 0);
  std::vector<std::vector<long>> folds(n_folds);
  const long base = n / n_folds, rem = n % n_folds;
  long pos = 0;
  for (int h = 0; h < n_folds; ++h) {
    const long size = base + (h < rem ? 1 : 0);
    for (long t = 0; t < size; ++t) {
      folds[h].push_back(order[pos]);
      report.fold_assignment[order[pos]] = h;
      ++pos;
    }
    std::sort(folds[h].begin(), folds[h].end());
  }

  const int kmax = k_sorted.back();
  for (int h = 0; h < n_folds; ++h) {
    const long nh = static_cast<long>(folds[h].size());
    const long ntrain = n - nh;
    if (nh < 2 || kmax >= std::min(ntrain, p + q))
      throw FoldTooSmallError("cross_validate: fold " + std::to_string(h) +
                              " leaves too little data for the requested ranks");
  }

  const std::size_t nk = k_sorted.size(), nl = lambda_sorted.size();
  // residuals[(h, ki)][li] holds the fold-h validation residual matrix.
  std::vector<std::vector<Matrix>> residuals(n_folds * nk);
  std::vector<DataMatrix> val_y(n_folds);
  for (int h = 0; h < n_folds; ++h) val_y[h] = y.select_rows(folds[h]);

  parallel_for(n_folds * nk, threads, [&](std::size_t task) {
    const int h = static_cast<int>(task / nk);
    const std::size_t ki = task % nk;
    const int k = k_sorted[ki];

    std::vector<long> train;
    train.reserve(n - folds[h].size());
    for (long i = 0; i < n; ++i)
      if (report.fold_assignment[i] != h) train.push_back(i);
    const DataMatrix xtr = x.select_rows(train);
    const DataMatrix ytr = y.select_rows(train);
    const DataMatrix joint = hstack(xtr, ytr);
    const DataMatrix xval = x.select_rows(folds[h]);

    const CellCovResult cov = cellcov(joint, k, opts.cov);
    auto [xz, x_std] = standardize(xtr, opts.cov.pca.chi);
    const CellPcaFit x_fit =
        cellpca_fit(xz, predictor_rank(k, xtr.rows(), p), opts.cov.pca);

    auto& slot = residuals[task];
    slot.resize(nl);
    for (std::size_t li = 0; li < nl; ++li) {
      Matrix res(folds[h].size(), q);
      res.setConstant(std::numeric_limits<double>::quiet_NaN());
      try {
        const PluginFit plug = plugin_fit(cov.cov.mu, cov.cov.sigma, p, q,
                                          lambda_sorted[li], opts.cond_limit);
        const Matrix yhat = predict_with(x_std, x_fit.model, plug.B, plug.b, xval);
        for (long i = 0; i < res.rows(); ++i)
          for (long j = 0; j < q; ++j)
            if (val_y[h].observed(i, j))
              res(i, j) = val_y[h].values(i, j) - yhat(i, j);
      } catch (const SingularSystemError&) {
        res.resize(0, q);  // marks the (fold, k, lambda) cell unusable
      }
      slot[li] = std::move(res);
    }
  });

  double y_magnitude = 1.0;
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < q; ++j)
      if (y.observed(i, j)) y_magnitude = std::max(y_magnitude, std::abs(y.values(i, j)));

  report.cv_values.resize(nk, nl);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t ki = 0; ki < nk; ++ki) {
    for (std::size_t li = 0; li < nl; ++li) {
      double cv_total = 0.0;
      bool usable = true;
      // per-response accumulators over folds
      std::vector<double> wmse_sum(q, 0.0);
      std::vector<int> wmse_count(q, 0);
      for (int h = 0; h < n_folds && usable; ++h) {
        const Matrix& res = residuals[h * nk + ki][li];
        if (res.rows() == 0) {
          usable = false;
          break;
        }
        const long nh = res.rows();
        const auto& ym = val_y[h];
        // columnwise residual scales of this fold
        Vector sigma1(q);
        std::vector<double> raw(q, 0.0), colv;
        for (long j = 0; j < q; ++j) {
          colv.clear();
          for (long i = 0; i < nh; ++i)
            if (ym.observed(i, j)) colv.push_back(res(i, j));
          if (!colv.empty()) {
            const MScaleResult ms = mscale(colv, opts.cov.pca.chi);
            raw[j] = ms.degenerate ? 0.0 : ms.sigma;
          }
        }
        const double floor_value = scale_family_floor(raw, y_magnitude);
        for (long j = 0; j < q; ++j) sigma1[j] = std::max(raw[j], floor_value);

        Matrix wcell = Matrix::Zero(nh, q);
        for (long i = 0; i < nh; ++i)
          for (long j = 0; j < q; ++j)
            if (ym.observed(i, j))
              wcell(i, j) = opts.cov.pca.rho1.weight(res(i, j) / sigma1[j]);

        Vector d_i(nh);
        std::vector<double> dvals;
        for (long i = 0; i < nh; ++i) {
          double num = 0.0, den = 0.0;
          for (long j = 0; j < q; ++j) {
            if (!ym.observed(i, j)) continue;
            num += wcell(i, j) * res(i, j) * res(i, j);
            den += wcell(i, j);
          }
          d_i[i] = (den > 0.0) ? num / den : -1.0;  // -1 marks a dead row
          if (den > 0.0) dvals.push_back(d_i[i]);
        }
        double sigma2 = 0.0;
        if (!dvals.empty()) {
          const MScaleResult ms = mscale(dvals, opts.cov.pca.chi);
          sigma2 = std::max(ms.degenerate ? 0.0 : ms.sigma, floor_value);
        }
        Vector wcase = Vector::Zero(nh);
        for (long i = 0; i < nh; ++i)
          if (d_i[i] >= 0.0 && sigma2 > 0.0)
            wcase[i] = opts.cov.pca.rho2.weight(d_i[i] / sigma2);

        for (long j = 0; j < q; ++j) {
          double num = 0.0, den = 0.0;
          for (long i = 0; i < nh; ++i) {
            if (!ym.observed(i, j)) continue;
            const double w = wcase[i] * wcell(i, j) * wcell(i, j);
            num += w * res(i, j) * res(i, j);
            den += w;
          }
          if (den > 0.0) {
            wmse_sum[j] += num / den;
            wmse_count[j] += 1;
          }
        }
      }
      if (usable) {
        double acc = 0.0;
        for (long j = 0; j < q; ++j) {
          if (wmse_count[j] == 0) {
            usable = false;
            break;
          }
          acc += wmse_sum[j] / wmse_count[j];
        }
        cv_total = acc / static_cast<double>(q);
      }
      report.cv_values(ki, li) = usable ? cv_total : inf;
    }
  }

  double best = inf;
  bool found = false;
  for (std::size_t ki = 0; ki < nk; ++ki)
    for (std::size_t li = 0; li < nl; ++li)
      if (report.cv_values(ki, li) < best) {
        best = report.cv_values(ki, li);
        report.best_k = k_sorted[ki];
        report.best_lambda = lambda_sorted[li];
        found = true;
      }
  if (!found)
    throw SingularSystemError("cross_validate: no usable (k, lambda) grid point");
  return report;
}

}  // namespace cellmr
