#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "cellmr/errors.hpp"
#include "cellmr/fastcellcov.hpp"
#include "cellmr/rng.hpp"
#include "cellmr/stats.hpp"
#include "testing.hpp"

using namespace cellmr;

namespace {

// Training pipeline on a factor design, shared across cases.
struct Trained {
  DataMatrix data;
  CellCovResult pipeline;
  FastCellCovModel model;
};

Trained train_on_factors(long n, double noise, std::uint64_t seed) {
  Trained t;
  Matrix X = testing::factor_data(n, testing::spread_loadings(), noise, seed);
  t.data = DataMatrix::complete(X);
  t.pipeline = cellcov(t.data, 2, CellCovOptions{});
  t.model = fastcellcov_train(t.data, t.pipeline);
  return t;
}

// A model whose every gate is wide open: no subspace, enormous scales, so
// all weights sit on the exact plateau of the kernel.
FastCellCovModel all_pass_model(long d) {
  FastCellCovModel m;
  m.standardizer.medians = Vector::Zero(d);
  m.standardizer.scales = Vector::Ones(d);
  m.mu_z = Vector::Zero(d);
  m.V = Matrix(d, 0);
  m.s_hat = Vector::Constant(d, 1e12);
  m.corrs = Matrix::Zero(d, d);
  m.slopes = m.corrs;
  m.neighbors.assign(d, {});
  m.shrink = Vector::Ones(d);
  m.shrink_degenerate.assign(d, 1);
  m.resid_scales = Vector::Ones(d);
  m.sigma1_star = Vector::Constant(d, 1e12);
  m.sigma2_star = 1.0;
  m.sigma2_degenerate = true;
  return m;
}

}  // namespace

TEST_CASE("shrink slope closed forms") {
  std::vector<double> pred(50), obs(50);
  Matrix g = testing::gaussian_matrix(50, 1, 3, "shrink");
  for (int i = 0; i < 50; ++i) {
    pred[i] = g(i, 0);
    obs[i] = 2.0 * g(i, 0);
  }
  SUBCASE("exact proportionality is recovered") {
    ShrinkSlopeResult r = shrink_slope(obs, pred);
    CHECK(r.slope == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_FALSE(r.degenerate);
  }
  SUBCASE("one wild observation is rejected") {
    std::vector<double> dirty = pred;
    dirty[0] += 50.0;
    ShrinkSlopeResult r = shrink_slope(dirty, pred);
    CHECK(r.slope == doctest::Approx(1.0).epsilon(1e-2));
  }
  SUBCASE("an all-zero prediction is degenerate") {
    std::vector<double> zeros(50, 0.0);
    ShrinkSlopeResult r = shrink_slope(obs, zeros);
    CHECK(r.degenerate);
    CHECK(r.slope == 1.0);
  }
  SUBCASE("length mismatch is rejected") {
    std::vector<double> shorter(10, 1.0);
    CHECK_THROWS_AS(shrink_slope(obs, shorter), DimensionMismatchError);
  }
}

TEST_CASE("a duplicated column becomes its own perfect neighbor") {
  Matrix X = testing::gaussian_matrix(200, 2, 5, "dup_fast");
  X.col(1) = X.col(0);
  DataMatrix data = DataMatrix::complete(X);
  CellCovResult pipeline = cellcov(data, 1, CellCovOptions{});
  FastCellCovModel m = fastcellcov_train(data, pipeline);
  CHECK(m.corrs(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
  REQUIRE(m.neighbors[0] == std::vector<long>{1});
  REQUIRE(m.neighbors[1] == std::vector<long>{0});
  CHECK(m.shrink[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(m.shrink[1] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("independent columns produce no neighbors and still evaluate") {
  Matrix X = testing::gaussian_matrix(500, 4, 31, "fastcov_ind");
  DataMatrix data = DataMatrix::complete(X);
  CellCovResult pipeline = cellcov(data, 1, CellCovOptions{});
  FastCellCovModel m = fastcellcov_train(data, pipeline);
  for (long j = 0; j < 4; ++j) {
    CHECK(m.neighbors[j].empty());
    CHECK(m.shrink_degenerate[j] == 1);
  }
  FastCovEstimate est = fastcellcov_evaluate(m, data);
  CHECK(est.mu.cwiseAbs().maxCoeff() <= 0.1);
  for (long a = 0; a < 4; ++a) {
    CHECK(est.sigma(a, a) > 0.6);
    CHECK(est.sigma(a, a) < 1.4);
    for (long b = 0; b < 4; ++b)
      if (a != b) CHECK(std::abs(est.sigma(a, b)) <= 0.2);
  }
}

TEST_CASE("an all-pass model reduces to plain moments") {
  const long n = 30, d = 3;
  Matrix X = testing::gaussian_matrix(n, d, 12, "allpass");
  DataMatrix data = DataMatrix::complete(X);
  FastCellCovModel m = all_pass_model(d);
  FastCovEstimate est = fastcellcov_evaluate(m, data);

  CHECK(est.flag_weights.minCoeff() == 1.0);
  CHECK(est.cell_weights.minCoeff() == 1.0);
  CHECK(est.case_weights.minCoeff() == 1.0);
  CHECK(est.sub_weights.minCoeff() == 1.0);

  // with unit weights the location is exactly the column mean and the
  // scatter the uncentered second moment about the stored center
  for (long j = 0; j < d; ++j) {
    double s = 0.0;
    for (long i = 0; i < n; ++i) s += X(i, j);
    CHECK(est.mu[j] == doctest::Approx(s / n).epsilon(1e-14));
  }
  Matrix ref = X.transpose() * X / static_cast<double>(n);
  CHECK(testing::rel_frobenius(est.sigma, ref) <= 1e-12);
}

TEST_CASE("clean factor data reproduces the full pipeline estimate") {
  Trained t = train_on_factors(500, 0.3, 7);
  FastCovEstimate est = fastcellcov_evaluate(t.model, t.data);
  CHECK(testing::rel_frobenius(est.sigma, t.pipeline.cov.sigma) <= 0.25);
  Vector mean = t.data.values.colwise().mean();
  CHECK((est.mu - mean).cwiseAbs().maxCoeff() <=
        1e-2 * mean.cwiseAbs().maxCoeff() + 0.05);
}

TEST_CASE("a far cell is flagged to exact zero weight") {
  Trained t = train_on_factors(300, 0.3, 9);
  Matrix probe = t.data.values.topRows(5);
  probe(2, 1) += 50.0;
  FastCovEstimate est = fastcellcov_evaluate(t.model, DataMatrix::complete(probe));
  CHECK(est.flag_weights(2, 1) == 0.0);
  CHECK(est.cell_weights(2, 1) == 0.0);
  // the clean cells of the same case keep positive weight
  CHECK(est.flag_weights(2, 0) > 0.0);
}

TEST_CASE("an entirely wild sample is floored to finite zero moments") {
  Trained t = train_on_factors(300, 0.3, 11);
  Matrix wild = Matrix::Constant(5, 5, 1e4);
  FastCovEstimate est = fastcellcov_evaluate(t.model, DataMatrix::complete(wild));
  CHECK(est.mu.allFinite());
  CHECK(est.sigma.allFinite());
  CHECK(est.mu.cwiseAbs().maxCoeff() == 0.0);
  CHECK(est.sigma.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("subspace redescender thresholds sit at the frozen quantiles") {
  Trained t = train_on_factors(200, 0.3, 13);
  REQUIRE(t.model.rank() == 2);
  // descent starts at the chi-square quantile matching P(|Z| <= 1.5) and
  // ends at the 0.99 quantile, both for two degrees of freedom
  CHECK(t.model.psi_sub.b == doctest::Approx(4.025594440528).epsilon(1e-9));
  CHECK(t.model.psi_sub.c == doctest::Approx(9.210340371976).epsilon(1e-9));
  CHECK(t.model.psi_sub.q2 ==
        doctest::Approx(2.15 / (9.210340371976 - 4.025594440528)).epsilon(1e-9));
  CHECK_FALSE(t.model.sigma2_degenerate);
}

TEST_CASE("zero training residuals disable the casewise filter") {
  const long n = 20, d = 2;
  Matrix X(n, d);
  for (long i = 0; i < n; ++i) {
    X(i, 0) = 0.1 * static_cast<double>(i) - 1.0;
    X(i, 1) = 0.0;
  }
  DataMatrix data = DataMatrix::complete(X);

  CellCovResult pipeline;
  pipeline.cov.standardizer.medians = Vector::Zero(d);
  pipeline.cov.standardizer.scales = Vector::Ones(d);
  pipeline.cov.sigma = Matrix::Identity(d, d);
  pipeline.pca.model.mu_z = Vector::Zero(d);
  pipeline.pca.model.V = Matrix(d, 1);
  pipeline.pca.model.V << 1.0, 0.0;
  pipeline.pca.model.sigma1 = Vector::Ones(d);
  pipeline.pca.model.sigma2 = 1.0;
  pipeline.pca.residuals = Matrix::Zero(n, d);
  pipeline.pca.cell_weights = Matrix::Ones(n, d);
  pipeline.pca.case_weights = Vector::Ones(n);
  pipeline.mcd.mu = Vector::Zero(1);
  pipeline.mcd.sigma = Matrix::Identity(1, 1);

  FastCellCovModel m = fastcellcov_train(data, pipeline);
  CHECK(m.sigma2_degenerate);
  CHECK(m.sigma2_star == 1.0);

  // even a point far off the training subspace keeps full casewise weight,
  // while its projection residual is still flagged at the cell level
  Matrix probe(2, 2);
  probe << 0.5, 0.0, 0.0, 10.0;
  FastCovEstimate est = fastcellcov_evaluate(m, DataMatrix::complete(probe));
  CHECK(est.case_weights[0] == 1.0);
  CHECK(est.case_weights[1] == 1.0);
  CHECK(est.cell_weights(1, 1) == 0.0);
}

TEST_CASE("noisy training keeps the casewise filter live") {
  Trained t = train_on_factors(200, 0.4, 17);
  CHECK_FALSE(t.model.sigma2_degenerate);
  Matrix probe = t.data.values.topRows(2);
  // push the second case far off the subspace in every coordinate
  probe.row(1) = Eigen::RowVectorXd::Constant(5, 30.0);
  FastCovEstimate est = fastcellcov_evaluate(t.model, DataMatrix::complete(probe));
  CHECK(est.case_weights[1] <= 0.5);
  CHECK(est.case_weights[0] > est.case_weights[1]);
}

TEST_CASE("evaluation is deterministic and safely shared across threads") {
  Trained t = train_on_factors(200, 0.3, 19);
  FastCovEstimate serial = fastcellcov_evaluate(t.model, t.data);
  FastCovEstimate again = fastcellcov_evaluate(t.model, t.data);
  CHECK(testing::bitwise_equal(serial.mu, again.mu));
  CHECK(testing::bitwise_equal(serial.sigma, again.sigma));

  FastCovEstimate from_threads[2];
  std::thread t1([&] { from_threads[0] = fastcellcov_evaluate(t.model, t.data); });
  std::thread t2([&] { from_threads[1] = fastcellcov_evaluate(t.model, t.data); });
  t1.join();
  t2.join();
  for (const FastCovEstimate& est : from_threads) {
    CHECK(testing::bitwise_equal(serial.mu, est.mu));
    CHECK(testing::bitwise_equal(serial.sigma, est.sigma));
  }
}

TEST_CASE("dimension mismatches are rejected") {
  Trained t = train_on_factors(100, 0.3, 23);
  Matrix narrow = testing::gaussian_matrix(10, 3, 1, "narrow");
  CHECK_THROWS_AS(fastcellcov_evaluate(t.model, DataMatrix::complete(narrow)),
                  DimensionMismatchError);
}
