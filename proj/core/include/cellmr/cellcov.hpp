#pragma once

#include <utility>

#include "cellmr/cellpca.hpp"
#include "cellmr/datamodel.hpp"
#include "cellmr/mcd.hpp"

namespace cellmr {

struct CellCovOptions {
  CellPcaOptions pca;
  McdOptions mcd;
  double normalizer_tol = 1e-12;
};

// Cellwise and casewise robust location/scatter estimate.
struct CovEstimate {
  Vector mu;          // original units
  Matrix sigma;       // original units, PSD after eigenvalue clipping
  Matrix sigma_sub;   // principal-subspace scatter, standardized scale
  Matrix sigma_orth;  // orthogonal-complement scatter, standardized scale
  double normalizer_b = 0.0;
  Standardizer standardizer;
  double psd_clip = 0.0;  // largest negative eigenvalue magnitude clipped away
};

// Full pipeline state, kept so downstream consumers can reuse the fit.
struct CellCovResult {
  CovEstimate cov;
  CellPcaFit pca;   // on the standardized data
  McdEstimate mcd;  // on the score rows (empty when k = 0)
};

// Weighted scatter of the orthogonal-complement residuals and its
// normalizer b.  Exposed separately so tests can assemble it from
// hand-modified weights.
std::pair<Matrix, double> orth_scatter(const CellPcaFit& fit);

CellCovResult cellcov(const DataMatrix& data, int k,
                      const CellCovOptions& opts = CellCovOptions());

}  // namespace cellmr
