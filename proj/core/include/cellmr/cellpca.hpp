#pragma once

#include <vector>

#include "cellmr/datamodel.hpp"
#include "cellmr/mkernel.hpp"

namespace cellmr {

struct CellPcaOptions {
  RhoKernel rho1 = RhoKernel::make_tanh();
  RhoKernel rho2 = RhoKernel::make_tanh();
  TanhChi chi;              // M-scale companion for the residual scales
  int max_iter = 100;
  double tol = 1e-8;        // relative loss change stopping rule
  double score_ridge = 1e-8;  // damping for score solves of rows with < k cells
  // The residual scales are refreshed between alternation rounds only while
  // they still move: refreshing forever lets the weighted solves and the
  // scales chase each other downward until the scales collapse on perfectly
  // clean data.  Once the family changes by less than scale_refresh_tol
  // (relative, per entry) from one round to the next -- or after
  // scale_refresh_max rounds -- the scales freeze and the remaining rounds
  // minimize the loss at fixed scales.
  double scale_refresh_tol = 0.05;
  int scale_refresh_max = 30;
};

// Slim parameter set sufficient for imputation and out-of-sample scoring.
struct CellPcaModel {
  Vector mu_z;     // center, length d
  Matrix V;        // loadings, d x k (k may be 0)
  Vector sigma1;   // per-column residual scales, length d
  double sigma2 = 1.0;
  RhoKernel rho1 = RhoKernel::make_tanh();
  RhoKernel rho2 = RhoKernel::make_tanh();

  long dim() const { return mu_z.size(); }
  long rank() const { return V.cols(); }
};

// Full fit state on the training sample.
struct CellPcaFit {
  CellPcaModel model;
  Matrix scores;         // n x k
  Matrix residuals;      // n x d, zero where unobserved
  Matrix cell_weights;   // n x d, zero where unobserved
  Vector case_weights;   // n
  Vector t;              // casewise total deviations, n
  std::vector<double> loss_trace;
  bool converged = false;
  int iterations = 0;

  Matrix fitted() const;  // n x d matrix mu_z + scores * V^T
};

// Loss of a candidate (mu_z, V, U) on standardized data: the scales sigma1 /
// sigma2 are recomputed from the candidate's residuals exactly as in fitting.
double cellpca_loss(const DataMatrix& zdata, const Vector& mu_z, const Matrix& V,
                    const Matrix& U, const CellPcaOptions& opts = CellPcaOptions());

// Alternating weighted least squares fit on standardized data.  k = 0 fits a
// center-only model.  Initialization is a deterministic truncated SVD of the
// median-filled, winsorized data, so repeated runs agree bitwise.
CellPcaFit cellpca_fit(const DataMatrix& zdata, int k,
                       const CellPcaOptions& opts = CellPcaOptions());

struct ImputeResult {
  Vector x_imp;         // imputed point in the model's (standardized) scale
  Vector scores;        // length k
  Vector cell_weights;  // length d, zero where unobserved
  Vector fitted;        // model prediction mu_z + V * scores
};

// Replaces missing cells by the model prediction and shrinks outlying
// observed cells toward it:  x_imp = xhat + w * m * (x - xhat) cellwise.
ImputeResult impute_point(const CellPcaModel& model, const Vector& x,
                          const std::vector<std::uint8_t>& mask);

}  // namespace cellmr
