#include "cellmr/diagnostics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>

#include "cellmr/cellcov.hpp"
#include "cellmr/errors.hpp"
#include "cellmr/rng.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {

// LDLT of a symmetric matrix, ridge-damped when not positive definite.
struct SafeLdlt {
  Eigen::LDLT<Matrix> ldlt;
  Matrix mat;
  bool damped = false;

  explicit SafeLdlt(const Matrix& m, const char* what) : mat(m) {
    ldlt.compute(mat);
    if (!positive()) {
      const double ridge = 1e-8 * mat.trace() / static_cast<double>(mat.rows());
      if (!(ridge > 0.0))
        throw SingularCovarianceError(std::string(what) + ": not invertible");
      mat += ridge * Matrix::Identity(mat.rows(), mat.cols());
      ldlt.compute(mat);
      damped = true;
      if (!positive())
        throw SingularCovarianceError(std::string(what) + ": not invertible");
    }
  }

  bool positive() const {
    if (ldlt.info() != Eigen::Success) return false;
    for (long i = 0; i < ldlt.vectorD().size(); ++i)
      if (!(ldlt.vectorD()[i] > 0.0)) return false;
    return true;
  }

  double distance(const Vector& centered) const {
    return std::sqrt(std::max(0.0, centered.dot(ldlt.solve(centered))));
  }
};

std::vector<std::uint8_t> mask_row(const DataMatrix& d, long i) {
  std::vector<std::uint8_t> m(d.cols());
  for (long j = 0; j < d.cols(); ++j) m[static_cast<std::size_t>(j)] = d.mask(i, j);
  return m;
}

}  // namespace

const char* case_class_name(CaseClass c) {
  switch (c) {
    case CaseClass::regular: return "regular";
    case CaseClass::good_leverage: return "good_leverage";
    case CaseClass::vertical_outlier: return "vertical_outlier";
    case CaseClass::bad_leverage: return "bad_leverage";
  }
  return "regular";
}

double simulate_t_cutoff(long n, long d, int k, long n_sim, std::uint64_t seed) {
  if (n < 2 || d < 1) throw InvalidConfigError("simulate_t_cutoff: shape too small");
  if (n_sim < 100) throw InvalidConfigError("simulate_t_cutoff: n_sim must be >= 100");
  const long reps = (n_sim + n - 1) / n;
  std::vector<double> pool;
  pool.reserve(static_cast<std::size_t>(reps * n));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (long r = 0; r < reps; ++r) {
    auto rng = make_rng(seed, "t_cutoff", static_cast<std::uint64_t>(r));
    Matrix values(n, d);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < d; ++j) values(i, j) = gauss(rng);
    auto [z, std_] = standardize(DataMatrix::complete(values));
    const CellPcaFit fit = cellpca_fit(z, k);
    for (long i = 0; i < n; ++i) pool.push_back(fit.t[i]);
  }
  return quantile_ceil(pool, 0.99);
}

DiagnosticsReport diagnose(const RegressionModel& model, const DataMatrix& x,
                           const DataMatrix& y, double t_cutoff) {
  x.validate();
  if (x.cols() != model.p || y.cols() != model.q)
    throw DimensionMismatchError("diagnose: data shape differs from model");
  if (x.rows() != y.rows())
    throw DimensionMismatchError("diagnose: predictor and response row counts differ");
  const long n = x.rows(), p = model.p, q = model.q;
  if (n == 0) throw EmptyInputError("diagnose: no rows");
  if (!(t_cutoff > 0.0)) throw InvalidConfigError("diagnose: t_cutoff must be positive");

  DiagnosticsReport rep;
  rep.cutoff_rd = std::sqrt(chi2_quantile(0.99, static_cast<double>(q)));
  rep.cutoff_pd = std::sqrt(chi2_quantile(0.99, static_cast<double>(p)));
  rep.cutoff_cell = std::sqrt(chi2_quantile(0.99, 1.0));
  rep.cutoff_t = t_cutoff;

  const Matrix x_imp = impute_predictors(model, x);
  Matrix pred(n, q);
  for (long i = 0; i < n; ++i)
    pred.row(i) = (model.b + model.B.transpose() * x_imp.row(i).transpose()).transpose();

  // Residual distances on the observed response sub-block of each row.
  SafeLdlt eps(model.sigma_eps, "residual scatter");
  rep.eps_damped = eps.damped;
  rep.rd = Vector::Zero(n);
  for (long i = 0; i < n; ++i) {
    std::vector<long> obs;
    for (long j = 0; j < q; ++j)
      if (y.observed(i, j)) obs.push_back(j);
    if (obs.empty()) continue;
    if (static_cast<long>(obs.size()) == q) {
      Vector r(q);
      for (long j = 0; j < q; ++j) r[j] = y.values(i, j) - pred(i, j);
      rep.rd[i] = eps.distance(r);
    } else {
      const long m = static_cast<long>(obs.size());
      Vector r(m);
      Matrix sub(m, m);
      for (long a = 0; a < m; ++a) {
        r[a] = y.values(i, obs[a]) - pred(i, obs[a]);
        for (long b = 0; b < m; ++b) sub(a, b) = eps.mat(obs[a], obs[b]);
      }
      rep.rd[i] = SafeLdlt(sub, "residual scatter sub-block").distance(r);
    }
  }

  // Predictor distances against a fresh robust estimate on the X block.
  const CellCovResult xcov = cellcov(x, static_cast<int>(model.x_pca.rank()));
  SafeLdlt xs(xcov.cov.sigma, "predictor scatter");
  rep.xcov_damped = xs.damped;
  rep.pd = Vector::Zero(n);
  for (long i = 0; i < n; ++i)
    rep.pd[i] = xs.distance(x_imp.row(i).transpose() - xcov.cov.mu);

  rep.case_class.resize(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const bool vert = rep.rd[i] > rep.cutoff_rd;
    const bool lever = rep.pd[i] > rep.cutoff_pd;
    rep.case_class[static_cast<std::size_t>(i)] =
        vert ? (lever ? CaseClass::bad_leverage : CaseClass::vertical_outlier)
             : (lever ? CaseClass::good_leverage : CaseClass::regular);
  }

  // Casewise deviations and cell weights under the joint model.
  const DataMatrix joint = hstack(x, y);
  const DataMatrix zj = model.cov.standardizer.apply(joint);
  const long d = zj.cols();
  rep.t = Vector::Zero(n);
  rep.point_size = Vector::Zero(n);
  rep.case_shade = Vector::Zero(n);
  for (long i = 0; i < n; ++i) {
    const ImputeResult res =
        impute_point(model.joint_pca, zj.values.row(i).transpose(), mask_row(zj, i));
    double wsum = 0.0, tsum = 0.0;
    long mi = 0;
    for (long j = 0; j < d; ++j) {
      if (!zj.observed(i, j)) continue;
      const double s1 = model.joint_pca.sigma1[j];
      const double r = zj.values(i, j) - res.fitted[j];
      wsum += res.cell_weights[j];
      tsum += s1 * s1 * model.joint_pca.rho1.rho(r / s1);
      ++mi;
    }
    rep.point_size[i] = 1.0 - wsum / static_cast<double>(d);
    rep.t[i] = mi > 0 ? std::sqrt(tsum / static_cast<double>(mi)) : 0.0;
    const double lo = rep.cutoff_t, hi = 1.5 * rep.cutoff_t;
    rep.case_shade[i] =
        rep.t[i] <= lo ? 0.0 : (rep.t[i] >= hi ? 1.0 : (rep.t[i] - lo) / (hi - lo));
  }

  // Predictor cellmap from the predictor-block model.
  const DataMatrix zx = model.x_std.apply(x);
  rep.cell_residuals_x = Matrix::Zero(n, p);
  rep.cell_flags_x = Eigen::MatrixXi::Constant(n, p, kMissingCell);
  for (long i = 0; i < n; ++i) {
    const ImputeResult res =
        impute_point(model.x_pca, zx.values.row(i).transpose(), mask_row(zx, i));
    for (long j = 0; j < p; ++j) {
      if (!zx.observed(i, j)) continue;
      const double r = (zx.values(i, j) - res.fitted[j]) / model.x_pca.sigma1[j];
      rep.cell_residuals_x(i, j) = r;
      rep.cell_flags_x(i, j) = std::abs(r) <= rep.cutoff_cell ? 0 : (r > 0.0 ? 1 : -1);
    }
  }

  // Response cellmap from the regression residuals.
  rep.cell_residuals_y = Matrix::Zero(n, q);
  rep.cell_flags_y = Eigen::MatrixXi::Constant(n, q, kMissingCell);
  const double eps_floor = 1e-12 * std::max(1.0, model.sigma_eps.trace());
  for (long j = 0; j < q; ++j) {
    const double se = std::sqrt(std::max(model.sigma_eps(j, j), eps_floor));
    for (long i = 0; i < n; ++i) {
      if (!y.observed(i, j)) continue;
      const double r = (y.values(i, j) - pred(i, j)) / se;
      rep.cell_residuals_y(i, j) = r;
      rep.cell_flags_y(i, j) = std::abs(r) <= rep.cutoff_cell ? 0 : (r > 0.0 ? 1 : -1);
    }
  }
  return rep;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(17);
  return out;
}

void write_cellmap(const std::string& path, const Matrix& resid,
                   const Eigen::MatrixXi& flags, const std::vector<std::string>& names) {
  if (static_cast<long>(names.size()) != resid.cols())
    throw DimensionMismatchError("cellmap: name count differs from column count");
  auto out = open_out(path);
  out << "id,variable,stdres,flag\n";
  for (long i = 0; i < resid.rows(); ++i) {
    for (long j = 0; j < resid.cols(); ++j) {
      out << (i + 1) << ',' << names[static_cast<std::size_t>(j)] << ',';
      if (flags(i, j) == kMissingCell)
        out << "NA,missing";
      else
        out << resid(i, j) << ',' << flags(i, j);
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace

void write_outlier_map(const std::string& path, const DiagnosticsReport& rep) {
  auto out = open_out(path);
  out << "id,rd,pd,size,shade,class\n";
  for (long i = 0; i < rep.rd.size(); ++i) {
    out << (i + 1) << ',' << rep.rd[i] << ',' << rep.pd[i] << ',' << rep.point_size[i]
        << ',' << rep.case_shade[i] << ','
        << case_class_name(rep.case_class[static_cast<std::size_t>(i)]) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_cellmap_x(const std::string& path, const DiagnosticsReport& rep,
                     const std::vector<std::string>& names) {
  write_cellmap(path, rep.cell_residuals_x, rep.cell_flags_x, names);
}

void write_cellmap_y(const std::string& path, const DiagnosticsReport& rep,
                     const std::vector<std::string>& names) {
  write_cellmap(path, rep.cell_residuals_y, rep.cell_flags_y, names);
}

}  // namespace cellmr
