#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cellmr/errors.hpp"
#include "cellmr/inference.hpp"
#include "cellmr/rng.hpp"
#include "cellmr/stats.hpp"
#include "testing.hpp"

using namespace cellmr;

namespace {

ThetaVector random_theta(long d, std::mt19937_64& rng, double mu_range,
                         double sig_range) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  ThetaVector t;
  t.mu.resize(d);
  for (long i = 0; i < d; ++i) t.mu[i] = mu_range * unif(rng);
  Matrix s(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j <= i; ++j) {
      s(i, j) = sig_range * unif(rng);
      s(j, i) = s(i, j);
    }
  t.sigma_vechs = vech_s(s);
  return t;
}

double theta_distance(const ThetaVector& a, const ThetaVector& b) {
  return std::sqrt((a.mu - b.mu).squaredNorm() +
                   (a.sigma_vechs - b.sigma_vechs).squaredNorm());
}

}  // namespace

TEST_CASE("scaled half-vectorization is an isometric round trip") {
  Matrix s(3, 3);
  s << 2.0, 0.3, -0.7, 0.3, 1.5, 0.4, -0.7, 0.4, 0.9;
  Vector v = vech_s(s);
  REQUIRE(v.size() == 6);
  CHECK(std::abs(v.norm() - s.norm()) <= 1e-12);
  Matrix back = vech_s_inverse(v, 3);
  CHECK((back - s).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK_THROWS_AS(vech_s(Matrix::Zero(2, 3)), DimensionMismatchError);
  CHECK_THROWS_AS(vech_s_inverse(Vector::Zero(5), 3), DimensionMismatchError);

  ThetaVector t = theta_from_moments(Vector::Zero(3), s);
  CHECK((sigma_from_theta(t) - s).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(t.norm() == doctest::Approx(s.norm()).epsilon(1e-12));
}

TEST_CASE("data-driven parameter box") {
  Vector mu(2);
  mu << 3.0, 4.0;
  Matrix sigma(2, 2);
  sigma << 0.04, 0.0, 0.0, 4.0;
  ThetaSpace space = ThetaSpace::around(mu, sigma);
  CHECK(space.M == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(space.c_lo == doctest::Approx(4e-4).epsilon(1e-9));
  CHECK(space.c_hi == doctest::Approx(400.0).epsilon(1e-9));
  CHECK(space.contains(theta_from_moments(mu, sigma)));
}

TEST_CASE("projection clips means radially and scatters spectrally") {
  ThetaSpace space;
  space.M = 1.0;
  space.c_lo = 0.1;
  space.c_hi = 1.0;

  SUBCASE("interior points pass through unchanged") {
    Vector mu(2);
    mu << 0.3, -0.4;
    Matrix s(2, 2);
    s << 0.5, 0.1, 0.1, 0.4;
    ThetaVector t = theta_from_moments(mu, s);
    ThetaVector out = project_theta(space, t);
    CHECK(testing::bitwise_equal(out.mu, t.mu));
    CHECK(testing::bitwise_equal(out.sigma_vechs, t.sigma_vechs));
  }
  SUBCASE("a long mean is pulled back onto the sphere") {
    Vector mu(2);
    mu << 2.0, 0.0;
    ThetaVector t = theta_from_moments(mu, 0.5 * Matrix::Identity(2, 2));
    ThetaVector out = project_theta(space, t);
    CHECK(out.mu[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.mu[1] == 0.0);
  }
  SUBCASE("scatter eigenvalues are clipped into the band") {
    Matrix s(2, 2);
    s << 0.05, 0.0, 0.0, 2.0;
    ThetaVector t = theta_from_moments(Vector::Zero(2), s);
    Matrix clipped = sigma_from_theta(project_theta(space, t));
    Matrix expect(2, 2);
    expect << 0.1, 0.0, 0.0, 1.0;
    CHECK((clipped - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("projection is idempotent") {
    auto rng = make_rng(4, "proj_idem");
    for (int rep = 0; rep < 50; ++rep) {
      ThetaVector t = random_theta(2, rng, 3.0, 2.0);
      ThetaVector once = project_theta(space, t);
      ThetaVector twice = project_theta(space, once);
      CHECK(theta_distance(once, twice) <= 1e-12);
      CHECK(space.contains(once, 1e-9));
    }
  }
  SUBCASE("projection is nonexpansive") {
    auto rng = make_rng(8, "proj_nonexp");
    for (int rep = 0; rep < 1000; ++rep) {
      ThetaVector a = random_theta(2, rng, 3.0, 2.0);
      ThetaVector b = random_theta(2, rng, 3.0, 2.0);
      const double before = theta_distance(a, b);
      const double after =
          theta_distance(project_theta(space, a), project_theta(space, b));
      CHECK(after <= before + 1e-12);
    }
  }
  SUBCASE("non-finite input is rejected") {
    ThetaVector t = theta_from_moments(Vector::Zero(2), Matrix::Identity(2, 2));
    t.mu[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(project_theta(space, t), NonFiniteInputError);
  }
}

TEST_CASE("fixed point with an unbiased auxiliary stops immediately") {
  ThetaSpace space;
  space.M = 10.0;
  space.c_lo = 0.01;
  space.c_hi = 10.0;
  Vector mu(2);
  mu << 0.5, -0.3;
  Matrix s(2, 2);
  s << 1.0, 0.2, 0.2, 0.8;
  ThetaVector pi_hat = theta_from_moments(mu, s);

  PiBarFn identity = [](const ThetaVector& t) { return t; };
  IndirectResult res = indirect_estimate(identity, pi_hat, space);
  CHECK(res.converged);
  CHECK(res.iterations == 1);
  CHECK(theta_distance(res.theta, pi_hat) <= 1e-12);
}

TEST_CASE("fixed point removes a constant bias in a few steps") {
  ThetaSpace space;
  space.M = 10.0;
  space.c_lo = 0.01;
  space.c_hi = 10.0;
  Vector mu(2);
  mu << 0.5, -0.3;
  Matrix s(2, 2);
  s << 1.0, 0.2, 0.2, 0.8;
  ThetaVector pi_hat = theta_from_moments(mu, s);

  ThetaVector delta;
  delta.mu = Vector::Constant(2, 0.2);
  delta.sigma_vechs = Vector::Constant(3, 0.1);
  PiBarFn biased = [&delta](const ThetaVector& t) {
    ThetaVector out = t;
    out.mu += delta.mu;
    out.sigma_vechs += delta.sigma_vechs;
    return out;
  };
  IndirectResult res = indirect_estimate(biased, pi_hat, space);
  CHECK(res.converged);
  CHECK(res.iterations <= 3);
  ThetaVector expect;
  expect.mu = pi_hat.mu - delta.mu;
  expect.sigma_vechs = pi_hat.sigma_vechs - delta.sigma_vechs;
  expect = project_theta(space, expect);
  CHECK(theta_distance(res.theta, expect) <= 1e-10);
}

TEST_CASE("auxiliary map uses common random numbers") {
  Matrix loadings(3, 1);
  loadings << 1.0, 0.7, -0.5;
  Matrix X = testing::factor_data(120, loadings, 0.4, 5);
  DataMatrix data = DataMatrix::complete(X);
  CellCovResult pipeline = cellcov(data, 1, CellCovOptions{});
  FastCellCovModel aux = fastcellcov_train(data, pipeline);

  PiBarFn f1 = make_pibar(aux, 50, 3, 41);
  PiBarFn f2 = make_pibar(aux, 50, 3, 41);
  ThetaVector at = theta_from_moments(Vector::Zero(3), Matrix::Identity(3, 3));
  ThetaVector a = f1(at), b = f2(at), c = f1(at);
  CHECK(testing::bitwise_equal(a.mu, b.mu));
  CHECK(testing::bitwise_equal(a.sigma_vechs, b.sigma_vechs));
  CHECK(testing::bitwise_equal(a.mu, c.mu));

  // a different seed gives different noise
  PiBarFn f3 = make_pibar(aux, 50, 3, 42);
  ThetaVector d = f3(at);
  CHECK_FALSE(testing::bitwise_equal(a.mu, d.mu));
}

TEST_CASE("contrast vectors address the stacked coefficient layout") {
  Vector ci = contrast_intercept(2, 2, 1);
  REQUIRE(ci.size() == 6);
  CHECK(ci[1] == 1.0);
  CHECK(ci.sum() == 1.0);
  // coefficient (row 1, response 0) sits after the intercept block at the
  // column-major position of the coefficient matrix
  Vector cc = contrast_coef(2, 2, 1, 0);
  REQUIRE(cc.size() == 6);
  CHECK(cc[3] == 1.0);
  CHECK(cc.sum() == 1.0);
  Vector last = contrast_coef(2, 2, 1, 1);
  CHECK(last[5] == 1.0);
  CHECK_THROWS_AS(contrast_intercept(2, 2, 2), InvalidConfigError);
  CHECK_THROWS_AS(contrast_coef(2, 2, 2, 0), InvalidConfigError);
}

TEST_CASE("bootstrap intervals are the pinned order statistics") {
  auto [x, y] = testing::bivariate_sample(60, 15);
  RegressionFitResult fit = cellmr_fit(x, y, 1, 0.1, RegressionOptions{});
  std::vector<Vector> contrasts = {contrast_intercept(1, 1, 0),
                                   contrast_coef(1, 1, 0, 0)};
  BootstrapOptions opts;
  opts.B = 25;
  opts.H = 2;
  opts.level = 0.8;
  opts.seed = 3;
  BootstrapResult res = cellboot(x, y, fit.model, contrasts, opts);
  REQUIRE(res.coef_samples.rows() == 25);
  REQUIRE(res.coef_samples.cols() == 2);
  CHECK(res.B == 25);
  CHECK(static_cast<long>(res.theta_samples.size()) == 25);

  for (long c = 0; c < 2; ++c) {
    std::vector<double> col(25);
    for (long i = 0; i < 25; ++i) col[i] = res.coef_samples(i, c);
    CHECK(res.lower[c] == quantile_ceil(col, 0.1));
    CHECK(res.upper[c] == quantile_ceil(col, 0.9));
    CHECK(res.lower[c] <= res.upper[c]);
  }
}

TEST_CASE("bootstrap replication is deterministic and thread count neutral") {
  auto [x, y] = testing::bivariate_sample(50, 33);
  RegressionFitResult fit = cellmr_fit(x, y, 1, 0.1, RegressionOptions{});
  std::vector<Vector> contrasts = {contrast_coef(1, 1, 0, 0)};
  BootstrapOptions opts;
  opts.B = 12;
  opts.H = 2;
  opts.seed = 7;
  BootstrapResult a = cellboot(x, y, fit.model, contrasts, opts);
  BootstrapResult b = cellboot(x, y, fit.model, contrasts, opts);
  opts.threads = 2;
  BootstrapResult c = cellboot(x, y, fit.model, contrasts, opts);
  CHECK(testing::bitwise_equal(a.coef_samples, b.coef_samples));
  CHECK(testing::bitwise_equal(a.coef_samples, c.coef_samples));
  CHECK(a.lower[0] == c.lower[0]);
  CHECK(a.upper[0] == c.upper[0]);
  CHECK(a.failures == b.failures);
}
