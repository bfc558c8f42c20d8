#include "cellmr/serialize.hpp"

#include <fstream>
#include <json.hpp>

#include "cellmr/errors.hpp"

namespace cellmr {

namespace {

using nlohmann::json;

json vec_to_json(const Vector& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector vec_from_json(const json& a) {
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<long>(i)] = a[i].get<double>();
  return v;
}

// Matrices are stored as an array of rows.
json mat_to_json(const Matrix& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  out["data"] = std::move(rows);
  return out;
}

Matrix mat_from_json(const json& j) {
  const long r = j.at("rows").get<long>();
  const long c = j.at("cols").get<long>();
  Matrix m(r, c);
  const json& rows = j.at("data");
  if (static_cast<long>(rows.size()) != r)
    throw IoError("model file: matrix row count mismatch");
  for (long i = 0; i < r; ++i) {
    const json& row = rows[static_cast<std::size_t>(i)];
    if (static_cast<long>(row.size()) != c)
      throw IoError("model file: matrix column count mismatch");
    for (long k = 0; k < c; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

json tanh_rho_to_json(const TanhRho& r) {
  return json{{"b", r.b}, {"c", r.c}, {"q2", r.q2}};
}

TanhRho tanh_rho_from_json(const json& j) {
  return TanhRho(j.at("b").get<double>(), j.at("c").get<double>(),
                 j.at("q2").get<double>());
}

json kernel_to_json(const RhoKernel& k) {
  json j;
  j["kind"] = k.kind == RhoKernel::Kind::tanh ? "tanh" : "quadratic";
  j["params"] = tanh_rho_to_json(k.params);
  return j;
}

RhoKernel kernel_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "quadratic") return RhoKernel::make_quadratic();
  if (kind != "tanh") throw IoError("model file: unknown kernel kind '" + kind + "'");
  const json& p = j.at("params");
  return RhoKernel::make_tanh(p.at("b").get<double>(), p.at("c").get<double>(),
                              p.at("q2").get<double>());
}

json std_to_json(const Standardizer& s) {
  return json{{"medians", vec_to_json(s.medians)}, {"scales", vec_to_json(s.scales)}};
}

Standardizer std_from_json(const json& j) {
  Standardizer s;
  s.medians = vec_from_json(j.at("medians"));
  s.scales = vec_from_json(j.at("scales"));
  if (s.medians.size() != s.scales.size())
    throw IoError("model file: standardizer length mismatch");
  return s;
}

json pca_to_json(const CellPcaModel& m) {
  json j;
  j["mu_z"] = vec_to_json(m.mu_z);
  j["V"] = mat_to_json(m.V);
  j["sigma1"] = vec_to_json(m.sigma1);
  j["sigma2"] = m.sigma2;
  j["rho1"] = kernel_to_json(m.rho1);
  j["rho2"] = kernel_to_json(m.rho2);
  return j;
}

CellPcaModel pca_from_json(const json& j) {
  CellPcaModel m;
  m.mu_z = vec_from_json(j.at("mu_z"));
  m.V = mat_from_json(j.at("V"));
  m.sigma1 = vec_from_json(j.at("sigma1"));
  m.sigma2 = j.at("sigma2").get<double>();
  m.rho1 = kernel_from_json(j.at("rho1"));
  m.rho2 = kernel_from_json(j.at("rho2"));
  return m;
}

json cov_to_json(const CovEstimate& c) {
  json j;
  j["mu"] = vec_to_json(c.mu);
  j["sigma"] = mat_to_json(c.sigma);
  j["sigma_sub"] = mat_to_json(c.sigma_sub);
  j["sigma_orth"] = mat_to_json(c.sigma_orth);
  j["normalizer_b"] = c.normalizer_b;
  j["standardizer"] = std_to_json(c.standardizer);
  j["psd_clip"] = c.psd_clip;
  return j;
}

CovEstimate cov_from_json(const json& j) {
  CovEstimate c;
  c.mu = vec_from_json(j.at("mu"));
  c.sigma = mat_from_json(j.at("sigma"));
  c.sigma_sub = mat_from_json(j.at("sigma_sub"));
  c.sigma_orth = mat_from_json(j.at("sigma_orth"));
  c.normalizer_b = j.at("normalizer_b").get<double>();
  c.standardizer = std_from_json(j.at("standardizer"));
  c.psd_clip = j.at("psd_clip").get<double>();
  return c;
}

json fastcov_to_json(const FastCellCovModel& m) {
  json j;
  j["standardizer"] = std_to_json(m.standardizer);
  j["mu_z"] = vec_to_json(m.mu_z);
  j["V"] = mat_to_json(m.V);
  j["s_hat"] = vec_to_json(m.s_hat);
  j["corrs"] = mat_to_json(m.corrs);
  j["slopes"] = mat_to_json(m.slopes);
  j["neighbors"] = m.neighbors;
  j["shrink"] = vec_to_json(m.shrink);
  j["shrink_degenerate"] = m.shrink_degenerate;
  j["resid_scales"] = vec_to_json(m.resid_scales);
  j["sigma1_star"] = vec_to_json(m.sigma1_star);
  j["sigma2_star"] = m.sigma2_star;
  j["sigma2_degenerate"] = m.sigma2_degenerate;
  j["mcd_mu"] = vec_to_json(m.mcd_mu);
  j["mcd_sigma"] = mat_to_json(m.mcd_sigma);
  j["delta_floor"] = m.delta_floor;
  j["psi_sub"] = tanh_rho_to_json(m.psi_sub);
  j["rho1"] = kernel_to_json(m.rho1);
  j["rho2"] = kernel_to_json(m.rho2);
  return j;
}

FastCellCovModel fastcov_from_json(const json& j) {
  FastCellCovModel m;
  m.standardizer = std_from_json(j.at("standardizer"));
  m.mu_z = vec_from_json(j.at("mu_z"));
  m.V = mat_from_json(j.at("V"));
  m.s_hat = vec_from_json(j.at("s_hat"));
  m.corrs = mat_from_json(j.at("corrs"));
  m.slopes = mat_from_json(j.at("slopes"));
  m.neighbors = j.at("neighbors").get<std::vector<std::vector<long>>>();
  m.shrink = vec_from_json(j.at("shrink"));
  m.shrink_degenerate = j.at("shrink_degenerate").get<std::vector<std::uint8_t>>();
  m.resid_scales = vec_from_json(j.at("resid_scales"));
  m.sigma1_star = vec_from_json(j.at("sigma1_star"));
  m.sigma2_star = j.at("sigma2_star").get<double>();
  m.sigma2_degenerate = j.at("sigma2_degenerate").get<bool>();
  m.mcd_mu = vec_from_json(j.at("mcd_mu"));
  m.mcd_sigma = mat_from_json(j.at("mcd_sigma"));
  m.delta_floor = j.at("delta_floor").get<double>();
  m.psi_sub = tanh_rho_from_json(j.at("psi_sub"));
  m.rho1 = kernel_from_json(j.at("rho1"));
  m.rho2 = kernel_from_json(j.at("rho2"));
  return m;
}

}  // namespace

std::string model_to_json_string(const RegressionModel& model, int indent) {
  json j;
  j["schema_version"] = model_schema_version;
  j["p"] = model.p;
  j["q"] = model.q;
  j["k"] = model.k;
  j["lambda"] = model.lambda;
  j["B"] = mat_to_json(model.B);
  j["b"] = vec_to_json(model.b);
  j["sigma_eps"] = mat_to_json(model.sigma_eps);
  j["cov"] = cov_to_json(model.cov);
  j["joint_pca"] = pca_to_json(model.joint_pca);
  j["x_std"] = std_to_json(model.x_std);
  j["x_pca"] = pca_to_json(model.x_pca);
  j["fastcov"] = fastcov_to_json(model.fastcov);
  j["x_names"] = model.x_names;
  j["y_names"] = model.y_names;
  return j.dump(indent);
}

RegressionModel model_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("model file: invalid JSON: ") + e.what());
  }
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != model_schema_version)
      throw IoError("model file: unsupported schema version " + std::to_string(version));
    RegressionModel m;
    m.p = j.at("p").get<int>();
    m.q = j.at("q").get<int>();
    m.k = j.at("k").get<int>();
    m.lambda = j.at("lambda").get<double>();
    m.B = mat_from_json(j.at("B"));
    m.b = vec_from_json(j.at("b"));
    m.sigma_eps = mat_from_json(j.at("sigma_eps"));
    m.cov = cov_from_json(j.at("cov"));
    m.joint_pca = pca_from_json(j.at("joint_pca"));
    m.x_std = std_from_json(j.at("x_std"));
    m.x_pca = pca_from_json(j.at("x_pca"));
    m.fastcov = fastcov_from_json(j.at("fastcov"));
    m.x_names = j.at("x_names").get<std::vector<std::string>>();
    m.y_names = j.at("y_names").get<std::vector<std::string>>();
    if (m.B.rows() != m.p || m.B.cols() != m.q || m.b.size() != m.q)
      throw IoError("model file: coefficient shapes disagree with p/q");
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("model file: missing or malformed field: ") + e.what());
  }
}

void save_model(const std::string& path, const RegressionModel& model) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << model_to_json_string(model) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

RegressionModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return model_from_json_string(text);
}

}  // namespace cellmr
