#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <string>

#include "cellmr/errors.hpp"
#include "cellmr/regression.hpp"
#include "cellmr/serialize.hpp"
#include "testing.hpp"

using namespace cellmr;

namespace {

struct SerializeFixture {
  DataMatrix x, y;
  RegressionModel model;

  SerializeFixture() {
    Matrix lambda(2, 1);
    lambda << 1.0, 0.6;
    Matrix xv = testing::factor_data(50, lambda, 0.5, 31);
    Matrix btrue(2, 2);
    btrue << 0.7, -0.3, 0.1, 0.5;
    Matrix yv = xv * btrue + 0.3 * testing::gaussian_matrix(50, 2, 32, "ser_noise");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    xv(3, 0) = nan;
    xv(11, 1) = nan;
    yv(7, 1) = nan;
    x = DataMatrix::from_values_with_nan(xv);
    x.column_names = {"x1", "x2"};
    y = DataMatrix::from_values_with_nan(yv);
    y.column_names = {"y1", "y2"};
    model = cellmr_fit(x, y, 1, 0.1, RegressionOptions{}).model;
  }
};

void check_kernel_equal(const RhoKernel& a, const RhoKernel& b) {
  CHECK(a.kind == b.kind);
  CHECK(a.params.b == b.params.b);
  CHECK(a.params.c == b.params.c);
  CHECK(a.params.q1 == b.params.q1);
  CHECK(a.params.q2 == b.params.q2);
  CHECK(a.params.d_const == b.params.d_const);
}

}  // namespace

TEST_CASE("model json round trip restores every field bitwise") {
  SerializeFixture f;
  const std::string text = model_to_json_string(f.model);
  const RegressionModel m = model_from_json_string(text);

  CHECK(m.p == f.model.p);
  CHECK(m.q == f.model.q);
  CHECK(m.k == f.model.k);
  CHECK(m.lambda == f.model.lambda);
  CHECK(testing::bitwise_equal(m.B, f.model.B));
  CHECK(testing::bitwise_equal(m.b, f.model.b));
  CHECK(testing::bitwise_equal(m.sigma_eps, f.model.sigma_eps));

  CHECK(testing::bitwise_equal(m.cov.mu, f.model.cov.mu));
  CHECK(testing::bitwise_equal(m.cov.sigma, f.model.cov.sigma));
  CHECK(testing::bitwise_equal(m.cov.sigma_sub, f.model.cov.sigma_sub));
  CHECK(testing::bitwise_equal(m.cov.sigma_orth, f.model.cov.sigma_orth));
  CHECK(m.cov.normalizer_b == f.model.cov.normalizer_b);
  CHECK(m.cov.psd_clip == f.model.cov.psd_clip);
  CHECK(testing::bitwise_equal(m.cov.standardizer.medians,
                               f.model.cov.standardizer.medians));
  CHECK(testing::bitwise_equal(m.cov.standardizer.scales,
                               f.model.cov.standardizer.scales));

  CHECK(testing::bitwise_equal(m.joint_pca.mu_z, f.model.joint_pca.mu_z));
  CHECK(testing::bitwise_equal(m.joint_pca.V, f.model.joint_pca.V));
  CHECK(testing::bitwise_equal(m.joint_pca.sigma1, f.model.joint_pca.sigma1));
  CHECK(m.joint_pca.sigma2 == f.model.joint_pca.sigma2);
  check_kernel_equal(m.joint_pca.rho1, f.model.joint_pca.rho1);
  check_kernel_equal(m.joint_pca.rho2, f.model.joint_pca.rho2);

  CHECK(testing::bitwise_equal(m.x_std.medians, f.model.x_std.medians));
  CHECK(testing::bitwise_equal(m.x_std.scales, f.model.x_std.scales));
  CHECK(testing::bitwise_equal(m.x_pca.mu_z, f.model.x_pca.mu_z));
  CHECK(testing::bitwise_equal(m.x_pca.V, f.model.x_pca.V));
  CHECK(testing::bitwise_equal(m.x_pca.sigma1, f.model.x_pca.sigma1));

  const FastCellCovModel& a = m.fastcov;
  const FastCellCovModel& b = f.model.fastcov;
  CHECK(testing::bitwise_equal(a.mu_z, b.mu_z));
  CHECK(testing::bitwise_equal(a.V, b.V));
  CHECK(testing::bitwise_equal(a.s_hat, b.s_hat));
  CHECK(testing::bitwise_equal(a.corrs, b.corrs));
  CHECK(testing::bitwise_equal(a.slopes, b.slopes));
  CHECK(a.neighbors == b.neighbors);
  CHECK(testing::bitwise_equal(a.shrink, b.shrink));
  CHECK(a.shrink_degenerate == b.shrink_degenerate);
  CHECK(testing::bitwise_equal(a.resid_scales, b.resid_scales));
  CHECK(testing::bitwise_equal(a.sigma1_star, b.sigma1_star));
  CHECK(a.sigma2_star == b.sigma2_star);
  CHECK(a.sigma2_degenerate == b.sigma2_degenerate);
  CHECK(testing::bitwise_equal(a.mcd_mu, b.mcd_mu));
  CHECK(testing::bitwise_equal(a.mcd_sigma, b.mcd_sigma));
  CHECK(a.delta_floor == b.delta_floor);
  CHECK(a.psi_sub.b == b.psi_sub.b);
  CHECK(a.psi_sub.c == b.psi_sub.c);
  CHECK(a.psi_sub.q2 == b.psi_sub.q2);

  CHECK(m.x_names == f.model.x_names);
  CHECK(m.y_names == f.model.y_names);

  // serialization is idempotent on the round-tripped model
  CHECK(model_to_json_string(m) == text);
}

TEST_CASE("a loaded model predicts bitwise like the original") {
  SerializeFixture f;
  const std::string path = "/tmp/cellmr_test_model.json";
  save_model(path, f.model);
  const RegressionModel loaded = load_model(path);

  Matrix xnew = testing::gaussian_matrix(20, 2, 40, "ser_newx");
  xnew(2, 1) = std::numeric_limits<double>::quiet_NaN();
  DataMatrix q = DataMatrix::from_values_with_nan(xnew);
  q.column_names = {"x1", "x2"};
  CHECK(testing::bitwise_equal(cellmr_predict(f.model, q), cellmr_predict(loaded, q)));

  // the file holds the dump plus a trailing newline
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == model_to_json_string(f.model) + "\n");
}

TEST_CASE("degenerate flags survive the round trip") {
  SerializeFixture f;
  RegressionModel m = f.model;
  m.fastcov.sigma2_degenerate = true;
  const RegressionModel back = model_from_json_string(model_to_json_string(m));
  CHECK(back.fastcov.sigma2_degenerate);
}

TEST_CASE("schema and shape problems are reported as io errors") {
  SerializeFixture f;
  const std::string text = model_to_json_string(f.model);

  CHECK_THROWS_AS(model_from_json_string("this is not json"), IoError);

  nlohmann::json j = nlohmann::json::parse(text);
  j["schema_version"] = 2;
  CHECK_THROWS_AS(model_from_json_string(j.dump()), IoError);

  j = nlohmann::json::parse(text);
  j.erase("b");
  CHECK_THROWS_AS(model_from_json_string(j.dump()), IoError);

  j = nlohmann::json::parse(text);
  j["B"]["rows"] = 5;
  CHECK_THROWS_AS(model_from_json_string(j.dump()), IoError);

  CHECK_THROWS_AS(load_model("/tmp/cellmr_test_no_such_model.json"), IoError);
}
