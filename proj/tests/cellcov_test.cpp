#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "cellmr/cellcov.hpp"
#include "cellmr/errors.hpp"
#include "cellmr/rng.hpp"
#include "testing.hpp"

using namespace cellmr;

namespace {

// A handcrafted decomposition state for exercising the scatter accumulator
// in isolation; only residuals and weights matter to it.
CellPcaFit handcrafted_fit(long n, long d, std::uint64_t seed) {
  CellPcaFit fit;
  fit.residuals = testing::gaussian_matrix(n, d, seed, "scatter_resid");
  auto rng = make_rng(seed, "scatter_weights");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  fit.cell_weights = Matrix(n, d);
  fit.case_weights = Vector(n);
  for (long i = 0; i < n; ++i) {
    fit.case_weights[i] = unif(rng);
    for (long j = 0; j < d; ++j) {
      const double u = unif(rng);
      // roughly a quarter of the cells act as unobserved or fully rejected
      fit.cell_weights(i, j) = (u < 0.25) ? 0.0 : u;
    }
  }
  return fit;
}

}  // namespace

TEST_CASE("scatter accumulator matches an explicit triple loop") {
  const long n = 7, d = 4;
  CellPcaFit fit = handcrafted_fit(n, d, 42);
  auto [S, b] = orth_scatter(fit);

  Matrix S_oracle = Matrix::Zero(d, d);
  for (long i = 0; i < n; ++i)
    for (long a = 0; a < d; ++a)
      for (long c = 0; c < d; ++c)
        S_oracle(a, c) += fit.case_weights[i] *
                          (fit.cell_weights(i, a) * fit.residuals(i, a)) *
                          (fit.cell_weights(i, c) * fit.residuals(i, c));

  // the normalizer couples every observed cell pair within a case; the sum
  // runs over all j, l pairs, not just the diagonal
  double b_oracle = 0.0;
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      for (long l = 0; l < d; ++l)
        b_oracle += fit.case_weights[i] * fit.cell_weights(i, j) *
                    fit.cell_weights(i, l);
  b_oracle /= static_cast<double>(d * d);

  CHECK((S - S_oracle).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(b == doctest::Approx(b_oracle).epsilon(1e-12));
}

TEST_CASE("zero residuals produce a zero scatter with a positive normalizer") {
  CellPcaFit fit = handcrafted_fit(6, 3, 9);
  fit.residuals.setZero();
  auto [S, b] = orth_scatter(fit);
  CHECK(S.cwiseAbs().maxCoeff() == 0.0);
  CHECK(b > 0.0);
}

TEST_CASE("a case with zero weight contributes nothing") {
  CellPcaFit fit = handcrafted_fit(8, 3, 5);
  CellPcaFit zeroed = fit;
  zeroed.case_weights[2] = 0.0;

  CellPcaFit dropped = fit;
  const long n = fit.residuals.rows();
  Matrix res(n - 1, 3), cw(n - 1, 3);
  Vector wc(n - 1);
  long r = 0;
  for (long i = 0; i < n; ++i) {
    if (i == 2) continue;
    res.row(r) = fit.residuals.row(i);
    cw.row(r) = fit.cell_weights.row(i);
    wc[r] = fit.case_weights[i];
    ++r;
  }
  dropped.residuals = res;
  dropped.cell_weights = cw;
  dropped.case_weights = wc;

  auto [s1, b1] = orth_scatter(zeroed);
  auto [s2, b2] = orth_scatter(dropped);
  CHECK((s1 - s2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(b1 == b2);

  // all-zero case weights drive the normalizer itself to zero
  CellPcaFit dead = fit;
  dead.case_weights.setZero();
  auto [s3, b3] = orth_scatter(dead);
  CHECK(b3 == 0.0);
  CHECK(s3.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("quadratic kernels and full-coverage scores reduce to the sample covariance") {
  const long n = 50, d = 4;
  Matrix loadings(d, 2);
  loadings << 1.0, 0.2, 0.8, -0.5, -0.6, 0.7, 0.4, 0.9;
  Matrix X = testing::factor_data(n, loadings, 0.4, 21);
  X.rowwise() += Eigen::RowVector4d(1.0, -2.0, 0.5, 3.0);
  DataMatrix data = DataMatrix::complete(X);

  CellCovOptions opts;
  opts.pca.rho1 = RhoKernel::make_quadratic();
  opts.pca.rho2 = RhoKernel::make_quadratic();
  opts.pca.tol = 1e-12;
  opts.pca.max_iter = 500;
  opts.mcd.alpha = 1.0;
  CellCovResult res = cellcov(data, 2, opts);

  Vector mean = X.colwise().mean();
  Matrix centered = X.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(n);

  CHECK((res.cov.mu - mean).norm() / mean.norm() <= 1e-6);
  CHECK(testing::rel_frobenius(res.cov.sigma, cov) <= 1e-6);
  CHECK(res.cov.psd_clip == 0.0);
}

TEST_CASE("estimates are equivariant under positive column rescaling") {
  const long n = 80, d = 3;
  Matrix loadings(d, 1);
  loadings << 1.0, -0.7, 0.5;
  Matrix X = testing::factor_data(n, loadings, 0.5, 3);
  X.rowwise() += Eigen::RowVector3d(2.0, -1.0, 3.0);
  CellCovResult base = cellcov(DataMatrix::complete(X), 1, CellCovOptions{});

  auto rng = make_rng(17, "cellcov_diag");
  std::uniform_real_distribution<double> unif(0.5, 2.5);
  for (int rep = 0; rep < 10; ++rep) {
    Vector a(d);
    for (long j = 0; j < d; ++j) a[j] = unif(rng);
    Matrix Xs = X * a.asDiagonal();
    CellCovResult scaled = cellcov(DataMatrix::complete(Xs), 1, CellCovOptions{});
    Vector mu_ref = a.asDiagonal() * base.cov.mu;
    Matrix sigma_ref = a.asDiagonal() * base.cov.sigma * a.asDiagonal();
    CHECK((scaled.cov.mu - mu_ref).norm() / mu_ref.norm() <= 1e-8);
    CHECK(testing::rel_frobenius(scaled.cov.sigma, sigma_ref) <= 1e-8);
  }
}

TEST_CASE("bivariate gaussian estimates land near the truth") {
  Matrix sigma(2, 2);
  sigma << 1.0, 0.9, 0.9, 1.0;
  Matrix X = testing::gaussian_with_cov(500, sigma, 11, "cellcov_mc");
  CellCovResult res = cellcov(DataMatrix::complete(X), 1, CellCovOptions{});
  CHECK(res.cov.mu.cwiseAbs().maxCoeff() <= 0.12);
  CHECK((res.cov.sigma - sigma).cwiseAbs().maxCoeff() <= 0.12);
}

TEST_CASE("component shapes and the assembly identity hold") {
  Matrix loadings(4, 2);
  loadings << 1.0, 0.0, 0.5, 0.8, -0.4, 0.6, 0.7, -0.3;
  Matrix X = testing::factor_data(70, loadings, 0.3, 8);
  // one gross cell should not break the decomposition
  X(5, 2) += 40.0;
  CellCovResult res = cellcov(DataMatrix::complete(X), 2, CellCovOptions{});

  // the subspace part has rank at most the requested dimension
  Eigen::SelfAdjointEigenSolver<Matrix> es_sub(res.cov.sigma_sub);
  Vector ev = es_sub.eigenvalues();
  std::sort(ev.data(), ev.data() + ev.size(), std::greater<double>());
  CHECK(ev[2] <= 1e-10 * std::max(1.0, ev[0]));

  // the reported covariance is the rescaled sum of the two parts
  REQUIRE(res.cov.psd_clip == 0.0);
  Matrix total = res.cov.sigma_sub + res.cov.sigma_orth;
  total = 0.5 * (total + total.transpose()).eval();
  Vector sc = res.cov.standardizer.scales;
  Matrix rebuilt = sc.asDiagonal() * total * sc.asDiagonal();
  CHECK(testing::rel_frobenius(res.cov.sigma, rebuilt) <= 1e-10);

  // and it is positive semidefinite
  Eigen::SelfAdjointEigenSolver<Matrix> es(res.cov.sigma);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()));
  CHECK(res.cov.normalizer_b > 0.0);
}

TEST_CASE("row order does not matter") {
  Matrix loadings(4, 1);
  loadings << 1.0, -0.6, 0.4, 0.8;
  Matrix X = testing::factor_data(60, loadings, 0.4, 14);
  Matrix Xrev = X.colwise().reverse();
  CellCovResult a = cellcov(DataMatrix::complete(X), 1, CellCovOptions{});
  CellCovResult b = cellcov(DataMatrix::complete(Xrev), 1, CellCovOptions{});
  CHECK((a.cov.mu - b.cov.mu).norm() <= 1e-7 * std::max(1.0, a.cov.mu.norm()));
  CHECK(testing::rel_frobenius(a.cov.sigma, b.cov.sigma) <= 1e-7);
}

TEST_CASE("missing cells are handled without bias on easy data") {
  Matrix loadings(3, 1);
  loadings << 1.0, 0.8, -0.6;
  Matrix X = testing::factor_data(300, loadings, 0.4, 77);
  Matrix withnan = X;
  auto rng = make_rng(78, "cellcov_na");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (long i = 0; i < withnan.rows(); ++i)
    for (long j = 0; j < withnan.cols(); ++j)
      if (unif(rng) < 0.1)
        withnan(i, j) = std::numeric_limits<double>::quiet_NaN();
  DataMatrix data = DataMatrix::from_values_with_nan(withnan);
  REQUIRE(static_cast<long>(data.mask.cast<long>().sum()) < 900);
  CellCovResult full = cellcov(DataMatrix::complete(X), 1, CellCovOptions{});
  CellCovResult holes = cellcov(data, 1, CellCovOptions{});
  CHECK(testing::rel_frobenius(full.cov.sigma, holes.cov.sigma) <= 0.25);
  CHECK((full.cov.mu - holes.cov.mu).cwiseAbs().maxCoeff() <= 0.15);
}
