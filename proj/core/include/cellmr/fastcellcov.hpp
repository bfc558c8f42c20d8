#pragma once

#include <vector>

#include "cellmr/cellcov.hpp"
#include "cellmr/datamodel.hpp"

namespace cellmr {

// One-step approximation of the full cellwise covariance pipeline.  All
// structural quantities (standardization, center, subspace, neighbor
// regressions, scales) are frozen from one training run; evaluating a new
// sample is a single weighted pass with no iteration.  The collection of
// fields below is exactly the tuning vector that a serialized model stores.
struct FastCellCovModel {
  Standardizer standardizer;  // columnwise robust scales of the training data
  Vector mu_z;                // training center, standardized scale
  Matrix V;                   // principal loadings, d x k
  Vector s_hat;               // sqrt diag of the standardized-scale estimate
  Matrix corrs;               // wrapped pairwise correlations, d x d
  Matrix slopes;              // neighbor regression slopes (equal to corrs)
  std::vector<std::vector<long>> neighbors;  // columns h predicting column j
  Vector shrink;              // per-column shrinkage of the neighbor prediction
  std::vector<std::uint8_t> shrink_degenerate;
  Vector resid_scales;        // scale of training prediction residuals
  Vector sigma1_star;         // per-column scales for projection residuals
  double sigma2_star = 1.0;   // scale for casewise mean squared residuals
  bool sigma2_degenerate = false;  // casewise scale had no spread at training
  Vector mcd_mu;              // score-space location (length k)
  Matrix mcd_sigma;           // score-space scatter (k x k)
  double delta_floor = 0.01;  // relative floor for the weight normalizers
  TanhRho psi_sub;            // redescender for the squared score distance
  RhoKernel rho1 = RhoKernel::make_tanh();
  RhoKernel rho2 = RhoKernel::make_tanh();

  long dim() const { return mu_z.size(); }
  long rank() const { return V.cols(); }
};

struct FastCovEstimate {
  Vector mu;      // original units
  Matrix sigma;   // original units
  Matrix flag_weights;   // w^f: cellwise flags on the incoming sample
  Matrix resid_weights;  // w^r: weights of prediction residuals
  Matrix cell_weights;   // w^cell_*: weights of projection residuals
  Vector case_weights;   // w^case_*
  Vector sub_weights;    // w^sub_*
};

struct ShrinkSlopeResult {
  double slope = 1.0;
  bool degenerate = false;
};

// Robust no-intercept slope of observed on predicted: least squares start,
// one reweighting pass with weights from the standardized residuals.
ShrinkSlopeResult shrink_slope(const std::vector<double>& observed,
                               const std::vector<double>& predicted,
                               const RhoKernel& kernel = RhoKernel::make_tanh(),
                               const TanhChi& chi = TanhChi());

FastCellCovModel fastcellcov_train(const DataMatrix& data,
                                   const CellCovResult& pipeline);

FastCovEstimate fastcellcov_evaluate(const FastCellCovModel& model,
                                     const DataMatrix& sample);

}  // namespace cellmr
