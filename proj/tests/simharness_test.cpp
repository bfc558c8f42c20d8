#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "cellmr/errors.hpp"
#include "cellmr/simharness.hpp"
#include "testing.hpp"

using namespace cellmr;

namespace {

ScenarioConfig small_config() {
  ScenarioConfig cfg;
  cfg.n = 60;
  cfg.p = 3;
  cfg.q = 2;
  cfg.kind = ScenarioKind::clean;
  cfg.gamma = 0.0;
  cfg.seed = 5;
  cfg.test_n = 50;
  cfg.k = 1;
  cfg.lambda = 0.1;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("generated moments obey the declared design") {
  ScenarioConfig cfg = small_config();
  GeneratedData g = generate(cfg, 0);

  // predictor covariance is the alternating ar structure
  CHECK(g.sigma_joint(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.sigma_joint(0, 1) == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(g.sigma_joint(0, 2) == doctest::Approx(0.16).epsilon(1e-12));

  // the error scale realizes the signal-to-noise ratio exactly
  Matrix sigma_x = g.sigma_joint.topLeftCorner(3, 3);
  const double signal = (g.B_true.transpose() * sigma_x * g.B_true).trace();
  CHECK(signal / g.sigma_eps_true.trace() == doctest::Approx(cfg.snr).epsilon(1e-10));

  // the joint covariance blocks are consistent with the linear model
  Matrix cross = sigma_x * g.B_true;
  CHECK((g.sigma_joint.topRightCorner(3, 2) - cross).cwiseAbs().maxCoeff() <= 1e-12);
  Matrix yy = g.B_true.transpose() * sigma_x * g.B_true + g.sigma_eps_true;
  CHECK((g.sigma_joint.bottomRightCorner(2, 2) - yy).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK(g.b_true.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.x_train.rows() == 60);
  CHECK(g.x_test.rows() == 50);
  CHECK(g.x_test.column_names[0] == "x1");
  CHECK(g.y_test.column_names[1] == "y2");
  CHECK(g.replaced.sum() == 0);
}

TEST_CASE("replication draws are bitwise reproducible") {
  ScenarioConfig cfg = small_config();
  GeneratedData a = generate(cfg, 3);
  GeneratedData b = generate(cfg, 3);
  CHECK(testing::bitwise_equal(a.x_train.values, b.x_train.values));
  CHECK(testing::bitwise_equal(a.y_train.values, b.y_train.values));
  CHECK(testing::bitwise_equal(a.x_test.values, b.x_test.values));
  CHECK(testing::bitwise_equal(a.B_true, b.B_true));
  GeneratedData c = generate(cfg, 4);
  CHECK_FALSE(testing::bitwise_equal(a.x_train.values, c.x_train.values));
}

TEST_CASE("contamination only touches the replaced cells") {
  ScenarioConfig clean_cfg = small_config();
  ScenarioConfig cell_cfg = clean_cfg;
  cell_cfg.kind = ScenarioKind::cellwise;
  cell_cfg.gamma = 6.0;
  cell_cfg.epsilon = 0.2;

  GeneratedData clean = generate(clean_cfg, 1);
  GeneratedData dirty = generate(cell_cfg, 1);

  long replaced = 0;
  for (long i = 0; i < 60; ++i) {
    for (long j = 0; j < 5; ++j) {
      const double c = j < 3 ? clean.x_train.values(i, j) : clean.y_train.values(i, j - 3);
      const double d = j < 3 ? dirty.x_train.values(i, j) : dirty.y_train.values(i, j - 3);
      if (dirty.replaced(i, j)) {
        ++replaced;
        // cells are moved to gamma times the marginal variance
        CHECK(d == doctest::Approx(6.0 * dirty.sigma_joint(j, j)).epsilon(1e-12));
      } else {
        CHECK(c == d);
      }
    }
  }
  // the replacement count is a plausible binomial draw at rate 0.2 of 300
  CHECK(replaced > 30);
  CHECK(replaced < 95);
}

TEST_CASE("casewise contamination replaces whole rows") {
  ScenarioConfig cfg = small_config();
  cfg.kind = ScenarioKind::casewise;
  cfg.gamma = 4.0;
  cfg.epsilon = 0.2;
  GeneratedData g = generate(cfg, 2);
  long rows_hit = 0;
  for (long i = 0; i < g.replaced.rows(); ++i) {
    const long s = g.replaced.row(i).sum();
    CHECK((s == 0 || s == g.replaced.cols()));
    rows_hit += s > 0;
  }
  CHECK(rows_hit > 2);
  CHECK(rows_hit < 25);
}

TEST_CASE("missingness respects the target rate and keeps rows alive") {
  ScenarioConfig cfg = small_config();
  cfg.na_fraction = 0.2;
  GeneratedData g = generate(cfg, 0);
  long missing = 0;
  for (long i = 0; i < 60; ++i) {
    long row_obs = 0;
    for (long j = 0; j < 3; ++j) {
      missing += !g.x_train.observed(i, j);
      row_obs += g.x_train.observed(i, j);
      if (!g.x_train.observed(i, j)) CHECK(std::isnan(g.x_train.values(i, j)));
    }
    for (long j = 0; j < 2; ++j) {
      missing += !g.y_train.observed(i, j);
      row_obs += g.y_train.observed(i, j);
    }
    CHECK(row_obs > 0);
  }
  // binomial(300, 0.2) stays well inside [30, 95]
  CHECK(missing > 30);
  CHECK(missing < 95);
  CHECK_NOTHROW(g.x_train.validate());
  CHECK_NOTHROW(g.y_train.validate());
}

TEST_CASE("scenario configuration is validated") {
  ScenarioConfig cfg = small_config();
  cfg.kind = ScenarioKind::cellwise;
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(generate(cfg, 0), InvalidConfigError);
  cfg = small_config();
  cfg.gamma = 6.0;  // clean kind with nonzero position
  CHECK_THROWS_AS(generate(cfg, 0), InvalidConfigError);
  cfg = small_config();
  cfg.epsilon = 0.5;
  cfg.kind = ScenarioKind::cellwise;
  cfg.gamma = 6.0;
  CHECK_THROWS_AS(generate(cfg, 0), InvalidConfigError);
  cfg = small_config();
  cfg.na_fraction = 1.0;
  CHECK_THROWS_AS(generate(cfg, 0), InvalidConfigError);
  cfg = small_config();
  cfg.snr = 0.0;
  CHECK_THROWS_AS(generate(cfg, 0), InvalidConfigError);
  CHECK(std::string(scenario_kind_name(ScenarioKind::mixed)) == "mixed");
  CHECK(scenario_kind_from_name("casewise") == ScenarioKind::casewise);
  CHECK_THROWS_AS(scenario_kind_from_name("bogus"), InvalidConfigError);
}

TEST_CASE("trimmed rmse keeps the smallest squared residuals") {
  Matrix r(4, 1);
  r << 1.0, 2.0, 3.0, 100.0;
  // keeping ceil(0.75 * 4) = 3 entries averages 1 + 4 + 9
  CHECK(trim_rmse(r, 0.75) == doctest::Approx(2.160246899469287).epsilon(1e-12));
  // alpha = 1 reduces to the plain rmse
  const double plain = std::sqrt((1.0 + 4.0 + 9.0 + 10000.0) / 4.0);
  CHECK(trim_rmse(r, 1.0) == doctest::Approx(plain).epsilon(1e-12));
  Matrix c = Matrix::Constant(5, 2, -3.0);
  CHECK(trim_rmse(c, 0.6) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK_THROWS_AS(trim_rmse(Matrix(0, 1), 0.75), EmptyInputError);
  CHECK_THROWS_AS(trim_rmse(r, 0.0), InvalidConfigError);
}

TEST_CASE("mse runner is deterministic and labels its rows") {
  ScenarioConfig cfg = small_config();
  cfg.reps = 2;
  MseTable a = run_mse(cfg);
  MseTable b = run_mse(cfg);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0].method == "cellmr");
  CHECK(a.rows[1].method == "ridge");
  for (int r = 0; r < 2; ++r) {
    CHECK(a.rows[r].reps_used == 2);
    CHECK(a.rows[r].failures == 0);
    REQUIRE(a.rows[r].per_rep.size() == 2);
    CHECK(a.rows[r].mse_mean > 0.0);
    CHECK(a.rows[r].per_rep[0] == b.rows[r].per_rep[0]);
    CHECK(a.rows[r].per_rep[1] == b.rows[r].per_rep[1]);
  }
  // on clean data the robust fit stays close to the ridge baseline
  CHECK(a.rows[0].mse_median <= 1.5 * a.rows[1].mse_median);

  const std::string path = "/tmp/cellmr_test_mse.csv";
  write_mse_csv(path, a);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "scenario,gamma,method,metric,value,reps,failures");
  long rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
}

TEST_CASE("coverage runner produces deterministic fractions") {
  ScenarioConfig cfg;
  cfg.n = 40;
  cfg.p = 1;
  cfg.q = 1;
  cfg.kind = ScenarioKind::clean;
  cfg.gamma = 0.0;
  cfg.seed = 2;
  cfg.reps = 2;
  cfg.test_n = 10;
  cfg.k = 1;
  cfg.lambda = 0.05;
  cfg.B = 20;
  cfg.H = 2;
  CoverageTable a = run_coverage(cfg);
  CoverageTable b = run_coverage(cfg);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0].method == "cellboot");
  CHECK(a.rows[1].method == "ols");
  for (int r = 0; r < 2; ++r) {
    CHECK(a.rows[r].reps_used == 2);
    CHECK(a.rows[r].coverage >= 0.0);
    CHECK(a.rows[r].coverage <= 1.0);
    CHECK(a.rows[r].mean_width > 0.0);
    CHECK(a.rows[r].coverage == b.rows[r].coverage);
    CHECK(a.rows[r].mean_width == b.rows[r].mean_width);
  }
  const std::string path = "/tmp/cellmr_test_coverage.csv";
  write_coverage_csv(path, a);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "scenario,gamma,method,metric,value,reps,failures");
}

TEST_CASE("manifests embed the configuration under a stable hash") {
  ScenarioConfig cfg = small_config();
  const std::string p1 = "/tmp/cellmr_test_manifest1.json";
  const std::string p2 = "/tmp/cellmr_test_manifest2.json";
  write_manifest(p1, cfg, "simulate --kind clean");
  write_manifest(p2, cfg, "simulate --kind clean");
  const std::string text = slurp(p1);
  CHECK(text == slurp(p2));
  CHECK(text.find("\"content_hash\"") != std::string::npos);
  CHECK(text.find("\"command\"") != std::string::npos);
  CHECK(text.find("\"n\": 60") != std::string::npos);
  cfg.seed = 6;
  write_manifest(p2, cfg, "simulate --kind clean");
  CHECK(text != slurp(p2));
}
