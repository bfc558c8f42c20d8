#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmr/cellcov.hpp"
#include "cellmr/cellpca.hpp"
#include "cellmr/datamodel.hpp"
#include "cellmr/fastcellcov.hpp"

namespace cellmr {

struct RegressionOptions {
  CellCovOptions cov;
  double cond_limit = 1e12;  // condition bound for the ridge system
};

// Ridge plug-in coefficients computed from a joint location/scatter.
struct PluginFit {
  Matrix B;          // p x q
  Vector b;          // q
  Matrix sigma_eps;  // q x q residual scatter
};

PluginFit plugin_fit(const Vector& mu, const Matrix& sigma, long p, long q,
                     double lambda, double cond_limit = 1e12);

// Everything needed to predict, diagnose and bootstrap; serializable.
struct RegressionModel {
  int p = 0, q = 0, k = 0;
  double lambda = 0.0;
  Matrix B;
  Vector b;
  Matrix sigma_eps;
  CovEstimate cov;          // joint estimate on [X Y]
  CellPcaModel joint_pca;   // slim joint fit, standardized scale
  Standardizer x_std;       // predictor-block standardizer
  CellPcaModel x_pca;       // slim predictor fit for imputation
  FastCellCovModel fastcov; // frozen one-step pipeline for resampling
  std::vector<std::string> x_names, y_names;
};

struct RegressionFitResult {
  RegressionModel model;
  CellCovResult joint;  // full pipeline state on the training data
  CellPcaFit x_fit;     // full predictor-block fit
};

// Fits the joint covariance pipeline on [X Y], derives the plug-in
// coefficients, and fits the predictor-block model used for imputation.
RegressionFitResult cellmr_fit(const DataMatrix& x, const DataMatrix& y, int k,
                               double lambda,
                               const RegressionOptions& opts = RegressionOptions());

// Predictions b + B^T x_imp with cellwise imputation of x (missing cells
// replaced, outlying cells shrunk toward the predictor model).
Matrix cellmr_predict(const RegressionModel& model, const DataMatrix& x);

// Imputed predictor rows in original units (exposed for diagnostics).
Matrix impute_predictors(const RegressionModel& model, const DataMatrix& x);

struct CvReport {
  std::vector<int> k_grid;
  std::vector<double> lambda_grid;
  Matrix cv_values;  // k_grid.size() x lambda_grid.size()
  int best_k = 0;
  double best_lambda = 0.0;
  std::vector<int> fold_assignment;  // per training row
};

// K-fold selection of (k, lambda) with outlier-weighted fold errors.
// The fold split is a seeded shuffle cut into contiguous blocks.
CvReport cross_validate(const DataMatrix& x, const DataMatrix& y,
                        const std::vector<int>& k_grid,
                        const std::vector<double>& lambda_grid, int n_folds,
                        std::uint64_t seed,
                        const RegressionOptions& opts = RegressionOptions(),
                        unsigned threads = 1);

// Default grids: ranks 1..min(10, d-1); ten log-spaced ridge values scaled
// by tr(sigma_x)/p, with 0 prepended when sigma_x is well conditioned.
std::vector<int> default_k_grid(long n, long d);
std::vector<double> default_lambda_grid(const Matrix& sigma_x, long p,
                                        double cond_threshold = 1e5);

// Non-robust baseline: sample mean/covariance plugged into the same ridge
// system (lambda = 0 gives least squares).  Missing cells are replaced by
// their column means of the observed cells.
PluginFit classical_fit(const DataMatrix& x, const DataMatrix& y, double lambda,
                        double cond_limit = 1e12);

}  // namespace cellmr
