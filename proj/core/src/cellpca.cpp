#include "cellmr/cellpca.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <limits>

#include "cellmr/errors.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {

struct ScaleState {
  Vector sigma1;  // floored per-column residual scales
  double sigma2 = 1.0;
  Vector t;       // casewise total deviations
};

double max_abs_observed(const DataMatrix& z) {
  double m = 0.0;
  for (long i = 0; i < z.rows(); ++i)
    for (long j = 0; j < z.cols(); ++j)
      if (z.observed(i, j)) m = std::max(m, std::abs(z.values(i, j)));
  return m;
}

// Residuals r_ij = z_ij - mu_j - u_i . v_j on observed cells, 0 elsewhere.
Matrix residual_matrix(const DataMatrix& z, const Vector& mu, const Matrix& V,
                       const Matrix& U) {
  const long n = z.rows(), d = z.cols();
  Matrix fit = U * V.transpose();
  fit.rowwise() += mu.transpose();
  Matrix R = Matrix::Zero(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      if (z.observed(i, j)) R(i, j) = z.values(i, j) - fit(i, j);
  return R;
}

ScaleState compute_scales(const DataMatrix& z, const Matrix& R,
                          const CellPcaOptions& opts, double data_magnitude) {
  const long n = z.rows(), d = z.cols();
  ScaleState s;
  s.sigma1.resize(d);
  std::vector<double> raw(d), col;
  for (long j = 0; j < d; ++j) {
    col.clear();
    for (long i = 0; i < n; ++i)
      if (z.observed(i, j)) col.push_back(R(i, j));
    if (col.empty()) {
      raw[j] = 0.0;
      continue;
    }
    const MScaleResult ms = mscale(col, opts.chi);
    raw[j] = ms.degenerate ? 0.0 : ms.sigma;
  }
  const double floor_value = scale_family_floor(raw, data_magnitude);
  for (long j = 0; j < d; ++j) s.sigma1[j] = std::max(raw[j], floor_value);

  s.t.resize(n);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    long mi = 0;
    for (long j = 0; j < d; ++j) {
      if (!z.observed(i, j)) continue;
      const double sj = s.sigma1[j];
      acc += sj * sj * opts.rho1.rho(R(i, j) / sj);
      ++mi;
    }
    s.t[i] = (mi > 0) ? std::sqrt(acc / static_cast<double>(mi)) : 0.0;
  }
  std::vector<double> tv(s.t.data(), s.t.data() + n);
  const MScaleResult ms2 = mscale(tv, opts.chi);
  s.sigma2 = std::max(ms2.degenerate ? 0.0 : ms2.sigma, floor_value);
  return s;
}

// Recomputes the casewise total deviations from fresh residuals while the
// scales themselves stay frozen.
void refresh_deviations(const DataMatrix& z, const Matrix& R,
                        const CellPcaOptions& opts, ScaleState& s) {
  const long n = z.rows(), d = z.cols();
  s.t.resize(n);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    long mi = 0;
    for (long j = 0; j < d; ++j) {
      if (!z.observed(i, j)) continue;
      const double sj = s.sigma1[j];
      acc += sj * sj * opts.rho1.rho(R(i, j) / sj);
      ++mi;
    }
    s.t[i] = (mi > 0) ? std::sqrt(acc / static_cast<double>(mi)) : 0.0;
  }
}

// Largest relative per-entry move between two scale families.
double scale_family_shift(const ScaleState& a, const ScaleState& b) {
  double shift = std::abs(b.sigma2 - a.sigma2) / std::max(a.sigma2, 1e-300);
  for (long j = 0; j < a.sigma1.size(); ++j)
    shift = std::max(shift, std::abs(b.sigma1[j] - a.sigma1[j]) /
                                std::max(a.sigma1[j], 1e-300));
  return shift;
}

void compute_weights(const DataMatrix& z, const Matrix& R, const ScaleState& s,
                     const CellPcaOptions& opts, Matrix& cellW, Vector& caseW) {
  const long n = z.rows(), d = z.cols();
  cellW = Matrix::Zero(n, d);
  caseW.resize(n);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < d; ++j)
      if (z.observed(i, j)) cellW(i, j) = opts.rho1.weight(R(i, j) / s.sigma1[j]);
    caseW[i] = opts.rho2.weight(s.t[i] / s.sigma2);
  }
}

double loss_given(const DataMatrix& z, const ScaleState& s,
                  const CellPcaOptions& opts) {
  const long n = z.rows();
  double m_total = 0.0;
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    const double mi = static_cast<double>(z.observed_in_row(i));
    m_total += mi;
    acc += mi * opts.rho2.rho(s.t[i] / s.sigma2);
  }
  return s.sigma2 * s.sigma2 / m_total * acc;
}

// Deterministic start: truncated SVD of the median-filled matrix after
// winsorizing cells beyond three robust scales from the column median.
void initial_estimate(const DataMatrix& z, int k, const TanhChi& chi, Vector& mu,
                      Matrix& V, Matrix& U) {
  const long n = z.rows(), d = z.cols();
  Matrix filled(n, d);
  mu.resize(d);
  std::vector<double> col;
  for (long j = 0; j < d; ++j) {
    col.clear();
    for (long i = 0; i < n; ++i)
      if (z.observed(i, j)) col.push_back(z.values(i, j));
    const double med = col.empty() ? 0.0 : median(col);
    double scale = 0.0;
    if (!col.empty()) {
      for (double& v : col) v -= med;
      const MScaleResult ms = mscale(col, chi);
      scale = ms.degenerate ? 0.0 : ms.sigma;
    }
    const double lo = med - 3.0 * scale, hi = med + 3.0 * scale;
    for (long i = 0; i < n; ++i) {
      double v = z.observed(i, j) ? z.values(i, j) : med;
      if (scale > 0.0) v = std::clamp(v, lo, hi);
      filled(i, j) = v;
    }
    mu[j] = med;
  }
  if (k == 0) {
    V.resize(d, 0);
    U.resize(n, 0);
    return;
  }
  Matrix centered = filled.rowwise() - mu.transpose();
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  V = svd.matrixV().leftCols(k);
  U = svd.matrixU().leftCols(k) * svd.singularValues().head(k).asDiagonal();
  // Fix signs so the fit does not depend on SVD sign conventions.
  for (int c = 0; c < k; ++c) {
    long arg = 0;
    for (long j = 1; j < d; ++j)
      if (std::abs(V(j, c)) > std::abs(V(arg, c))) arg = j;
    if (V(arg, c) < 0.0) {
      V.col(c) = -V.col(c);
      U.col(c) = -U.col(c);
    }
  }
}

Eigen::LDLT<Matrix> guarded_ldlt(Matrix A) {
  const long k = A.rows();
  const double guard = 1e-12 * std::max(1.0, A.trace());
  A += guard * Matrix::Identity(k, k);
  return Eigen::LDLT<Matrix>(A);
}

}  // namespace

Matrix CellPcaFit::fitted() const {
  Matrix f = scores * model.V.transpose();
  f.rowwise() += model.mu_z.transpose();
  return f;
}

double cellpca_loss(const DataMatrix& zdata, const Vector& mu_z, const Matrix& V,
                    const Matrix& U, const CellPcaOptions& opts) {
  zdata.validate();
  if (mu_z.size() != zdata.cols() || V.rows() != zdata.cols() ||
      U.rows() != zdata.rows() || V.cols() != U.cols())
    throw DimensionMismatchError("cellpca_loss: inconsistent candidate shapes");
  const Matrix R = residual_matrix(zdata, mu_z, V, U);
  const ScaleState s = compute_scales(zdata, R, opts, max_abs_observed(zdata));
  return loss_given(zdata, s, opts);
}

CellPcaFit cellpca_fit(const DataMatrix& zdata, int k, const CellPcaOptions& opts) {
  zdata.validate();
  const long n = zdata.rows(), d = zdata.cols();
  if (n == 0) throw EmptyInputError("cellpca_fit: no rows");
  if (k < 0 || (k > 0 && k >= std::min(n, d)))
    throw RankTooLargeError("cellpca_fit: rank " + std::to_string(k) +
                            " not below min(n, d) = " +
                            std::to_string(std::min(n, d)));
  const double magnitude = max_abs_observed(zdata);

  CellPcaFit fit;
  fit.model.rho1 = opts.rho1;
  fit.model.rho2 = opts.rho2;
  Vector& mu = fit.model.mu_z;
  Matrix& V = fit.model.V;
  Matrix& U = fit.scores;
  initial_estimate(zdata, k, opts.chi, mu, V, U);

  Matrix R;
  ScaleState scales;
  Matrix cellW;
  Vector caseW;
  double prev_loss = std::numeric_limits<double>::quiet_NaN();
  bool state_current = false;
  bool scales_frozen = false;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    R = residual_matrix(zdata, mu, V, U);
    if (!scales_frozen) {
      ScaleState fresh = compute_scales(zdata, R, opts, magnitude);
      if (iter > 0 && (scale_family_shift(scales, fresh) < opts.scale_refresh_tol ||
                       iter >= opts.scale_refresh_max))
        scales_frozen = true;
      scales = std::move(fresh);
    } else {
      refresh_deviations(zdata, R, opts, scales);
    }
    compute_weights(zdata, R, scales, opts, cellW, caseW);
    const double loss = loss_given(zdata, scales, opts);
    fit.loss_trace.push_back(loss);
    fit.iterations = iter + 1;
    state_current = true;
    if (iter >= 1 &&
        std::abs(loss - prev_loss) <= opts.tol * std::max(std::abs(prev_loss), 1e-12)) {
      fit.converged = true;
      break;
    }
    prev_loss = loss;

    // One round of the weighted normal equations: center, loading rows,
    // then all score rows, using the weights computed above.
    Matrix W = Matrix::Zero(n, d);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < d; ++j)
        if (zdata.observed(i, j)) W(i, j) = cellW(i, j) * caseW[i];

    for (long j = 0; j < d; ++j) {
      double num = 0.0, den = 0.0;
      for (long i = 0; i < n; ++i) {
        if (!zdata.observed(i, j)) continue;
        const double w = W(i, j);
        const double vu = (k > 0) ? V.row(j).dot(U.row(i)) : 0.0;
        num += w * (zdata.values(i, j) - vu);
        den += w;
      }
      if (den > 0.0) mu[j] = num / den;
    }

    if (k > 0) {
      for (long j = 0; j < d; ++j) {
        Matrix A = Matrix::Zero(k, k);
        Vector rhs = Vector::Zero(k);
        for (long i = 0; i < n; ++i) {
          if (!zdata.observed(i, j)) continue;
          const double w = W(i, j);
          A.noalias() += w * U.row(i).transpose() * U.row(i);
          rhs.noalias() += w * (zdata.values(i, j) - mu[j]) * U.row(i).transpose();
        }
        V.row(j) = guarded_ldlt(std::move(A)).solve(rhs).transpose();
      }

      for (long i = 0; i < n; ++i) {
        Matrix A = Matrix::Zero(k, k);
        Vector rhs = Vector::Zero(k);
        long mi = 0;
        for (long j = 0; j < d; ++j) {
          if (!zdata.observed(i, j)) continue;
          const double w = W(i, j);
          A.noalias() += w * V.row(j).transpose() * V.row(j);
          rhs.noalias() += w * (zdata.values(i, j) - mu[j]) * V.row(j).transpose();
          ++mi;
        }
        if (mi < k) A += opts.score_ridge * Matrix::Identity(k, k);
        U.row(i) = guarded_ldlt(std::move(A)).solve(rhs).transpose();
      }
    }
    state_current = false;
  }

  if (!state_current) {
    R = residual_matrix(zdata, mu, V, U);
    if (!scales_frozen)
      scales = compute_scales(zdata, R, opts, magnitude);
    else
      refresh_deviations(zdata, R, opts, scales);
    compute_weights(zdata, R, scales, opts, cellW, caseW);
    fit.loss_trace.push_back(loss_given(zdata, scales, opts));
  }

  fit.model.sigma1 = scales.sigma1;
  fit.model.sigma2 = scales.sigma2;
  fit.residuals = std::move(R);
  fit.cell_weights = std::move(cellW);
  fit.case_weights = std::move(caseW);
  fit.t = scales.t;
  return fit;
}

ImputeResult impute_point(const CellPcaModel& model, const Vector& x,
                          const std::vector<std::uint8_t>& mask) {
  const long d = model.dim();
  const long k = model.rank();
  if (x.size() != d || static_cast<long>(mask.size()) != d)
    throw DimensionMismatchError("impute_point: point dimension differs from model");
  long observed = 0;
  for (long j = 0; j < d; ++j) {
    if (mask[j] == 0) continue;
    if (!std::isfinite(x[j]))
      throw NonFiniteInputError("impute_point: non-finite observed cell");
    ++observed;
  }
  if (observed == 0) throw AllMissingPointError("impute_point: no observed cells");

  ImputeResult out;
  out.scores = Vector::Zero(k);
  // Reweighted score solve on the observed cells; case weights cancel here.
  // The first pass is unweighted (a plain least-squares projection) so that a
  // cold start far from the center cannot zero out every weight at once.
  for (int pass = 0; pass < 50 && k > 0; ++pass) {
    Matrix A = Matrix::Zero(k, k);
    Vector rhs = Vector::Zero(k);
    for (long j = 0; j < d; ++j) {
      if (mask[j] == 0) continue;
      const double pred = model.mu_z[j] + model.V.row(j).dot(out.scores);
      const double w =
          pass == 0 ? 1.0 : model.rho1.weight((x[j] - pred) / model.sigma1[j]);
      A.noalias() += w * model.V.row(j).transpose() * model.V.row(j);
      rhs.noalias() += w * (x[j] - model.mu_z[j]) * model.V.row(j).transpose();
    }
    if (observed < k) A += 1e-8 * Matrix::Identity(k, k);
    A += 1e-12 * std::max(1.0, A.trace()) * Matrix::Identity(k, k);
    const Vector next = Eigen::LDLT<Matrix>(A).solve(rhs);
    const double step = (next - out.scores).norm();
    out.scores = next;
    if (step <= 1e-10 * (1.0 + out.scores.norm())) break;
  }

  out.fitted = model.mu_z;
  if (k > 0) out.fitted += model.V * out.scores;
  out.cell_weights = Vector::Zero(d);
  out.x_imp.resize(d);
  for (long j = 0; j < d; ++j) {
    if (mask[j] != 0) {
      const double w = model.rho1.weight((x[j] - out.fitted[j]) / model.sigma1[j]);
      out.cell_weights[j] = w;
      out.x_imp[j] = out.fitted[j] + w * (x[j] - out.fitted[j]);
    } else {
      out.x_imp[j] = out.fitted[j];
    }
  }
  return out;
}

}  // namespace cellmr
