#pragma once

#include <vector>

#include "cellmr/datamodel.hpp"

namespace cellmr {

struct McdOptions {
  double alpha = 0.75;  // subset fraction, 0.5 < alpha <= 1
  int max_csteps = 100;
};

struct McdEstimate {
  Vector mu;
  Matrix sigma;               // consistency-scaled subset covariance
  std::vector<long> subset;   // sorted indices of the winning h-subset
  double log_det_raw = 0.0;   // log determinant of the raw subset covariance
  double consistency = 1.0;   // multiplier applied to the subset covariance
  bool singular = false;      // subset covariance needed ridge damping
};

// Minimum covariance determinant scatter on complete k-variate points.
// Six deterministic initial estimators are each refined by concentration
// steps; no random subsampling is involved, so results are reproducible.
// alpha = 1 reduces to the sample mean and covariance.
McdEstimate mcd_fit(const Matrix& points, const McdOptions& opts = McdOptions());

// One concentration step: mean/covariance of the given subset, then the
// h points with smallest Mahalanobis distance form the returned subset
// (h = subset.size()).  The determinant never increases along such steps.
std::vector<long> c_step(const Matrix& points, const std::vector<long>& subset);

// Consistency factor making the subset covariance unbiased for Gaussian
// data: alpha / F_{chi2_{k+2}}(q_alpha) with q_alpha the chi2_k quantile.
double mcd_consistency_factor(double alpha, int k);

}  // namespace cellmr
