#include "cellmr/fastcellcov.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "cellmr/errors.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

namespace {

constexpr double kNeighborThreshold = 0.5;

// Standardized coordinates (z - mu_z) / s on observed cells, 0 elsewhere.
Matrix scaled_coordinates(const DataMatrix& z, const Vector& mu_z, const Vector& s) {
  Matrix out = Matrix::Zero(z.rows(), z.cols());
  for (long i = 0; i < z.rows(); ++i)
    for (long j = 0; j < z.cols(); ++j)
      if (z.observed(i, j)) out(i, j) = (z.values(i, j) - mu_z[j]) / s[j];
  return out;
}

// Neighbor-regression predictions of column j from the wrapped-correlation
// structure.  zs holds scaled coordinates, wf the cellwise flag weights.
Matrix neighbor_predictions(const FastCellCovModel& m, const DataMatrix& sample,
                            const Matrix& zs, const Matrix& wf) {
  const long n = zs.rows(), d = zs.cols();
  Matrix pred = Matrix::Zero(n, d);
  for (long j = 0; j < d; ++j) {
    const auto& hs = m.neighbors[j];
    if (hs.empty()) continue;
    for (long i = 0; i < n; ++i) {
      double num = 0.0, den = 0.0;
      for (long h : hs) {
        if (!sample.observed(i, h)) continue;
        const double w = std::abs(m.corrs(j, h)) * wf(i, h);
        num += w * m.slopes(j, h) * zs(i, h);
        den += w;
      }
      if (den > 1e-12) pred(i, j) = num / den;
    }
  }
  return pred;
}

}  // namespace

ShrinkSlopeResult shrink_slope(const std::vector<double>& observed,
                               const std::vector<double>& predicted,
                               const RhoKernel& kernel, const TanhChi& chi) {
  if (observed.size() != predicted.size())
    throw DimensionMismatchError("shrink_slope: length mismatch");
  double sxy = 0.0, sxx = 0.0;
  long live = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    sxy += observed[i] * predicted[i];
    sxx += predicted[i] * predicted[i];
    if (predicted[i] != 0.0) ++live;
  }
  if (live < 2 || !(sxx > 1e-12)) return {1.0, true};
  const double a0 = sxy / sxx;

  std::vector<double> resid(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i)
    resid[i] = observed[i] - a0 * predicted[i];
  const MScaleResult ms = mscale(resid, chi);
  if (ms.degenerate || !(ms.sigma > 0.0)) return {a0, false};

  double wxy = 0.0, wxx = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double w = kernel.weight(resid[i] / ms.sigma);
    wxy += w * observed[i] * predicted[i];
    wxx += w * predicted[i] * predicted[i];
  }
  if (!(wxx > 1e-12)) return {a0, false};
  return {wxy / wxx, false};
}

FastCellCovModel fastcellcov_train(const DataMatrix& data,
                                   const CellCovResult& pipeline) {
  FastCellCovModel m;
  m.standardizer = pipeline.cov.standardizer;
  m.mu_z = pipeline.pca.model.mu_z;
  m.V = pipeline.pca.model.V;
  m.rho1 = pipeline.pca.model.rho1;
  m.rho2 = pipeline.pca.model.rho2;
  const long d = m.dim();
  const long k = m.rank();
  const long n = data.rows();

  // Columnwise spread of the scatter estimate, mapped to standardized scale.
  m.s_hat.resize(d);
  for (long j = 0; j < d; ++j) {
    const double dj = m.standardizer.scales[j];
    m.s_hat[j] = std::sqrt(std::max(pipeline.cov.sigma(j, j) / (dj * dj), 1e-12));
  }

  const DataMatrix z = m.standardizer.apply(data);
  const Matrix zs = scaled_coordinates(z, m.mu_z, m.s_hat);

  // Wrapped correlations on pairwise-complete observed cells.
  Matrix wrapped = Matrix::Zero(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      if (z.observed(i, j)) wrapped(i, j) = m.rho1.psi(zs(i, j));
  m.corrs = Matrix::Zero(d, d);
  for (long a = 0; a < d; ++a) {
    for (long b = a + 1; b < d; ++b) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      long cnt = 0;
      for (long i = 0; i < n; ++i) {
        if (!z.observed(i, a) || !z.observed(i, b)) continue;
        const double xa = wrapped(i, a), xb = wrapped(i, b);
        sx += xa;
        sy += xb;
        sxx += xa * xa;
        syy += xb * xb;
        sxy += xa * xb;
        ++cnt;
      }
      if (cnt < 3) continue;
      const double nn = static_cast<double>(cnt);
      const double vx = sxx - sx * sx / nn, vy = syy - sy * sy / nn;
      const double cxy = sxy - sx * sy / nn;
      if (vx > 1e-12 && vy > 1e-12) {
        const double r = cxy / std::sqrt(vx * vy);
        m.corrs(a, b) = r;
        m.corrs(b, a) = r;
      }
    }
  }
  m.slopes = m.corrs;
  m.neighbors.resize(d);
  for (long j = 0; j < d; ++j)
    for (long h = 0; h < d; ++h)
      if (h != j && std::abs(m.corrs(j, h)) >= kNeighborThreshold)
        m.neighbors[j].push_back(h);

  // Flag weights on the training sample, then raw neighbor predictions.
  Matrix wf = Matrix::Zero(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      if (z.observed(i, j)) wf(i, j) = m.rho1.weight(zs(i, j));
  const Matrix pred = neighbor_predictions(m, z, zs, wf);

  m.shrink.resize(d);
  m.shrink_degenerate.assign(d, 0);
  m.resid_scales.resize(d);
  std::vector<double> raw_scales(d, 0.0);
  std::vector<double> obs, prd;
  for (long j = 0; j < d; ++j) {
    obs.clear();
    prd.clear();
    for (long i = 0; i < n; ++i) {
      if (!z.observed(i, j)) continue;
      obs.push_back(zs(i, j));
      prd.push_back(pred(i, j));
    }
    const ShrinkSlopeResult sh = shrink_slope(obs, prd, m.rho1);
    m.shrink[j] = sh.degenerate ? 1.0 : sh.slope;
    m.shrink_degenerate[j] = sh.degenerate ? 1 : 0;
    for (std::size_t t = 0; t < obs.size(); ++t) obs[t] -= m.shrink[j] * prd[t];
    if (!obs.empty()) {
      const MScaleResult ms = mscale(obs);
      raw_scales[j] = ms.degenerate ? 0.0 : ms.sigma;
    }
  }
  const double floor_value = scale_family_floor(raw_scales, 1.0);
  for (long j = 0; j < d; ++j) m.resid_scales[j] = std::max(raw_scales[j], floor_value);

  // Scales of the projection step, taken from the training fit.
  m.sigma1_star = pipeline.pca.model.sigma1;
  std::vector<double> rimp;
  for (long i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (long j = 0; j < d; ++j) {
      if (!z.observed(i, j)) continue;
      const double w = pipeline.pca.cell_weights(i, j);
      num += w * pipeline.pca.residuals(i, j) * pipeline.pca.residuals(i, j);
      den += w;
    }
    if (den > 0.0) rimp.push_back(num / den);
  }
  double s2 = 0.0;
  if (!rimp.empty()) {
    const MScaleResult ms = mscale(rimp);
    s2 = ms.degenerate ? 0.0 : ms.sigma;
  }
  // When the training residuals carry no spread (the subspace interpolates
  // the sample), no casewise scale exists and the casewise filter is turned
  // off rather than rejecting every case against an arbitrary floor.
  m.sigma2_degenerate = !(s2 > 0.0);
  m.sigma2_star = m.sigma2_degenerate ? 1.0 : s2;

  if (k > 0) {
    m.mcd_mu = pipeline.mcd.mu;
    m.mcd_sigma = pipeline.mcd.sigma;
    // The redescender for squared score distances keeps full weight up to the
    // chi-square quantile matching the probability level where the plain
    // kernel starts to redescend (P(|Z| <= 1.5) for a standard normal), and
    // reaches zero at the 0.99 quantile.  Starting the descent at the median
    // instead would halve the retained subspace spread on perfectly clean
    // data, which the one-step approximation cannot afford.
    const double p_b = 2.0 * normal_cdf(m.rho1.params.b) - 1.0;
    const double b_s = chi2_quantile(p_b, static_cast<double>(k));
    const double c_s = chi2_quantile(0.99, static_cast<double>(k));
    m.psi_sub = TanhRho(b_s, c_s, 2.15 / (c_s - b_s));
  }
  return m;
}

FastCovEstimate fastcellcov_evaluate(const FastCellCovModel& m,
                                     const DataMatrix& sample) {
  sample.validate();
  const long d = m.dim(), k = m.rank();
  if (sample.cols() != d)
    throw DimensionMismatchError("fastcellcov_evaluate: dimension differs from model");
  const long n = sample.rows();
  if (n == 0) throw EmptyInputError("fastcellcov_evaluate: no rows");

  const DataMatrix z = m.standardizer.apply(sample);
  const Matrix zs = scaled_coordinates(z, m.mu_z, m.s_hat);

  FastCovEstimate out;
  out.flag_weights = Matrix::Zero(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      if (z.observed(i, j)) out.flag_weights(i, j) = m.rho1.weight(zs(i, j));

  // Shrunk neighbor predictions and their residual weights.
  Matrix pred = neighbor_predictions(m, z, zs, out.flag_weights);
  for (long j = 0; j < d; ++j) pred.col(j) *= m.shrink[j];
  out.resid_weights = Matrix::Zero(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      if (z.observed(i, j))
        out.resid_weights(i, j) =
            m.rho1.weight((zs(i, j) - pred(i, j)) / m.resid_scales[j]);

  // Cellwise imputation toward the back-transformed prediction, then
  // projection onto the training subspace.
  Matrix z_imp(n, d);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < d; ++j) {
      const double back = m.s_hat[j] * pred(i, j) + m.mu_z[j];
      if (!z.observed(i, j)) {
        z_imp(i, j) = back;
      } else {
        const double w = out.flag_weights(i, j) * out.resid_weights(i, j);
        z_imp(i, j) = w * z.values(i, j) + (1.0 - w) * back;
      }
    }
  }
  Matrix scores(n, k);
  Matrix zhat(n, d);
  for (long i = 0; i < n; ++i) {
    const Vector c = z_imp.row(i).transpose() - m.mu_z;
    const Vector u = m.V.transpose() * c;
    scores.row(i) = u.transpose();
    zhat.row(i) = (m.mu_z + m.V * u).transpose();
  }

  // Projection residual weights, casewise weights, subspace weights.
  out.cell_weights = Matrix::Zero(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j)
      if (z.observed(i, j))
        out.cell_weights(i, j) =
            m.rho1.weight((z.values(i, j) - zhat(i, j)) / m.sigma1_star[j]);

  out.case_weights = Vector::Zero(n);
  for (long i = 0; i < n; ++i) {
    if (m.sigma2_degenerate) {
      out.case_weights[i] = 1.0;
      continue;
    }
    double num = 0.0, den = 0.0;
    for (long j = 0; j < d; ++j) {
      if (!z.observed(i, j)) continue;
      const double w = out.cell_weights(i, j);
      const double r = z.values(i, j) - zhat(i, j);
      num += w * r * r;
      den += w;
    }
    if (den > 0.0) out.case_weights[i] = m.rho2.weight(num / den / m.sigma2_star);
  }

  out.sub_weights = Vector::Ones(n);
  if (k > 0) {
    Eigen::LDLT<Matrix> ldlt(m.mcd_sigma);
    bool ok = ldlt.info() == Eigen::Success;
    for (long c = 0; ok && c < k; ++c) ok = ldlt.vectorD()[c] > 0.0;
    Matrix msig = m.mcd_sigma;
    if (!ok) {
      msig += 1e-8 * std::max(1.0, msig.trace() / k) * Matrix::Identity(k, k);
      ldlt.compute(msig);
    }
    for (long i = 0; i < n; ++i) {
      const Vector c = scores.row(i).transpose() - m.mcd_mu;
      const double d2 = c.dot(ldlt.solve(c));
      out.sub_weights[i] = m.psi_sub.weight(d2);
    }
  }

  // Weighted location and scatter with floored normalizers, then map back.
  const double floor_n = static_cast<double>(n) * m.delta_floor;
  Vector mu_f(d);
  for (long j = 0; j < d; ++j) {
    double num = 0.0, den = 0.0;
    for (long i = 0; i < n; ++i) {
      if (!z.observed(i, j)) continue;
      const double w = out.case_weights[i] * out.sub_weights[i] * out.cell_weights(i, j);
      num += w * z.values(i, j);
      den += w;
    }
    mu_f[j] = num / std::max(den, floor_n);
  }

  Matrix sigma_f(d, d);
  for (long a = 0; a < d; ++a) {
    for (long b = a; b < d; ++b) {
      double num = 0.0, den = 0.0;
      for (long i = 0; i < n; ++i) {
        if (!z.observed(i, a) || !z.observed(i, b)) continue;
        const double wc = out.case_weights[i] * out.sub_weights[i];
        const double wa = out.cell_weights(i, a), wb = out.cell_weights(i, b);
        num += wc * wa * wb * (z.values(i, a) - m.mu_z[a]) * (z.values(i, b) - m.mu_z[b]);
        den += wc * wa * wb;
      }
      const double v = num / std::max(den, floor_n);
      sigma_f(a, b) = v;
      sigma_f(b, a) = v;
    }
  }

  auto [mu, sigma] = destandardize_cov(m.standardizer, mu_f, sigma_f);
  out.mu = std::move(mu);
  out.sigma = std::move(sigma);
  return out;
}

}  // namespace cellmr
