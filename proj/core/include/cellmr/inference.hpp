#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cellmr/fastcellcov.hpp"
#include "cellmr/regression.hpp"

namespace cellmr {

// Scaled half-vectorization: lower triangle stacked column by column with
// off-diagonal entries multiplied by sqrt(2), so the Euclidean norm of the
// result equals the Frobenius norm of the symmetric matrix.
Vector vech_s(const Matrix& sigma);
Matrix vech_s_inverse(const Vector& v, long d);

// Location/scatter parameter as one flat point; the norm used everywhere is
// the Euclidean norm of (mu, sigma_vechs).
struct ThetaVector {
  Vector mu;
  Vector sigma_vechs;

  long dim() const { return mu.size(); }
  double norm() const;
};

ThetaVector theta_from_moments(const Vector& mu, const Matrix& sigma);
Matrix sigma_from_theta(const ThetaVector& theta);

// Admissible parameters: mean inside the M-ball, scatter eigenvalues inside
// [c_lo, c_hi].
struct ThetaSpace {
  double M = 1.0;
  double c_lo = 1e-6;
  double c_hi = 1.0;

  // Data-driven box around a reference estimate:
  // M = 10 (|mu| + 1), c_lo = max(lambda_min / 100, 1e-6), c_hi = 100 lambda_max.
  static ThetaSpace around(const Vector& mu, const Matrix& sigma);

  bool contains(const ThetaVector& theta, double tol = 0.0) const;
};

// Metric projection onto the space: radial clip of the mean, eigenvalue clip
// of the scatter.  Points already inside are returned unchanged.
ThetaVector project_theta(const ThetaSpace& space, const ThetaVector& theta);

struct IndirectOptions {
  int max_iter = 50;
  double tol_scale = 1e-6;  // stop at ||step|| < tol_scale * (1 + ||pi_hat||)
};

struct IndirectResult {
  ThetaVector theta;
  int iterations = 0;
  bool converged = false;
};

// Mean auxiliary-estimator map theta -> pibar(theta); injectable so the
// fixed point can be exercised against synthetic auxiliaries.
using PiBarFn = std::function<ThetaVector(const ThetaVector&)>;

// Fixed-point bias correction: theta <- project(pi_hat + theta - pibar(theta))
// starting from project(pi_hat).  The last iterate is returned even when the
// tolerance was not reached within max_iter.
IndirectResult indirect_estimate(const PiBarFn& pibar, const ThetaVector& pi_hat,
                                 const ThetaSpace& space,
                                 const IndirectOptions& opts = IndirectOptions());

// Average of H one-step estimates on samples of size n drawn from
// N(mu, sigma) as mu + chol(sigma) u.  The standard-normal draws u are
// generated once, so every theta is evaluated on the same underlying noise
// and the map is deterministic.
PiBarFn make_pibar(const FastCellCovModel& aux, long n, int H, std::uint64_t seed);

struct BootstrapOptions {
  int B = 1000;
  int H = 50;
  double level = 0.90;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  IndirectOptions indirect;
  double cond_limit = 1e12;
};

struct BootstrapResult {
  std::vector<ThetaVector> theta_samples;  // accepted replicates, draw order
  Matrix coef_samples;                     // B x n_contrasts
  Vector lower, upper;                     // per contrast
  double level = 0.90;
  int B = 0;
  int H = 0;
  std::uint64_t seed = 0;
  long failures = 0;  // failed replicate attempts that were redrawn
};

// Contrast vectors select scalars of the stacked coefficient vector
// (intercept entries first, then the coefficient matrix stacked column by
// column); these helpers build the canonical unit contrasts.
Vector contrast_intercept(long p, long q, long j);
Vector contrast_coef(long p, long q, long j, long l);  // row j, response l

// Row-resampling bootstrap with one-step auxiliary estimates and fixed-point
// bias correction per replicate; percentile intervals from order statistics
// at ranks ceil(B alpha/2) and ceil(B (1 - alpha/2)).  Failed replicates are
// redrawn, up to 2B attempts in total.
BootstrapResult cellboot(const DataMatrix& x, const DataMatrix& y,
                         const RegressionModel& model,
                         const std::vector<Vector>& contrasts,
                         const BootstrapOptions& opts = BootstrapOptions());

// CSV / JSON emitters for bootstrap output.
void write_bootstrap_samples(const std::string& path, const BootstrapResult& result,
                             long contrast_index);
void write_bootstrap_summary(const std::string& path, const BootstrapResult& result,
                             const std::vector<std::string>& contrast_names);

}  // namespace cellmr
