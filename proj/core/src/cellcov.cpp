#include "cellmr/cellcov.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "cellmr/errors.hpp"

namespace cellmr {

std::pair<Matrix, double> orth_scatter(const CellPcaFit& fit) {
  const long n = fit.residuals.rows(), d = fit.residuals.cols();
  // cell_weights are already zero on unobserved cells, so the products
  // below implement the masked weight matrix directly.
  double b = 0.0;
  Matrix S = Matrix::Zero(d, d);
  for (long i = 0; i < n; ++i) {
    const double wc = fit.case_weights[i];
    const Vector we =
        fit.cell_weights.row(i).cwiseProduct(fit.residuals.row(i)).transpose();
    S.noalias() += wc * we * we.transpose();
    const double row_weight_sum = fit.cell_weights.row(i).sum();
    b += wc * row_weight_sum * row_weight_sum;
  }
  b /= static_cast<double>(d) * static_cast<double>(d);
  return {std::move(S), b};
}

CellCovResult cellcov(const DataMatrix& data, int k, const CellCovOptions& opts) {
  CellCovResult out;
  auto [zdata, std_] = standardize(data, opts.pca.chi);
  out.pca = cellpca_fit(zdata, k, opts.pca);

  const long d = data.cols();
  Vector mu_par = out.pca.model.mu_z;
  Matrix sigma_sub = Matrix::Zero(d, d);
  if (k > 0) {
    out.mcd = mcd_fit(out.pca.scores, opts.mcd);
    mu_par += out.pca.model.V * out.mcd.mu;
    sigma_sub = out.pca.model.V * out.mcd.sigma * out.pca.model.V.transpose();
  }

  auto [sigma_orth, b] = orth_scatter(out.pca);
  if (!(b > opts.normalizer_tol))
    throw NormalizerZeroError("cellcov: weight normalizer is numerically zero");
  sigma_orth /= b;

  Matrix total = sigma_sub + sigma_orth;
  total = 0.5 * (total + total.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(total);
  double clip = 0.0;
  Vector ev = es.eigenvalues();
  for (long i = 0; i < d; ++i) {
    if (ev[i] < 0.0) {
      clip = std::max(clip, -ev[i]);
      ev[i] = 0.0;
    }
  }
  if (clip > 0.0)
    total = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();

  out.cov.sigma_sub = std::move(sigma_sub);
  out.cov.sigma_orth = std::move(sigma_orth);
  out.cov.normalizer_b = b;
  out.cov.psd_clip = clip;
  out.cov.standardizer = std_;
  auto [mu, sigma] = destandardize_cov(std_, mu_par, total);
  out.cov.mu = std::move(mu);
  out.cov.sigma = std::move(sigma);
  return out;
}

}  // namespace cellmr
