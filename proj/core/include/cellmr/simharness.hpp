#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmr/datamodel.hpp"
#include "cellmr/inference.hpp"

namespace cellmr {

enum class ScenarioKind { clean, cellwise, casewise, mixed };

const char* scenario_kind_name(ScenarioKind k);
ScenarioKind scenario_kind_from_name(const std::string& name);

// Monte-Carlo scenario: autoregressive predictor covariance with entries
// (-0.4)^|j-l|, coefficient entries ~ N(0, 0.04), zero intercept, isotropic
// error covariance scaled so tr(B' Sigma_x B) / tr(Sigma_eps) equals snr.
struct ScenarioConfig {
  long n = 100;
  int p = 5;
  int q = 5;
  double epsilon = 0.2;    // contamination fraction
  double gamma = 0.0;      // contamination position; 0 means clean
  ScenarioKind kind = ScenarioKind::clean;
  double na_fraction = 0.0;
  double snr = 10.0;
  std::uint64_t seed = 0;
  int reps = 1;
  long test_n = 1000;
  // estimation settings used by the runners
  int k = 2;
  double lambda = 0.1;
  int B = 200;
  int H = 20;
  double level = 0.90;
};

struct GeneratedData {
  DataMatrix x_train, y_train;  // possibly contaminated / masked
  DataMatrix x_test, y_test;    // always clean and complete
  Matrix B_true;                // p x q
  Vector b_true;                // zero by construction
  Matrix sigma_eps_true;        // q x q
  Matrix sigma_joint;           // model-implied (p+q) joint covariance
  MaskMatrix replaced;          // train cells overwritten by contamination
};

// One training/test draw for replication `rep`.  Identical (cfg, rep) give
// bitwise identical output; contamination and masking use substreams, so the
// clean part of the data does not depend on the scenario kind.
GeneratedData generate(const ScenarioConfig& cfg, std::uint64_t rep);

struct MethodSummary {
  std::string method;
  double mse_mean = 0.0;
  double mse_median = 0.0;
  long reps_used = 0;
  long failures = 0;
  std::vector<double> per_rep;
};

struct MseTable {
  ScenarioConfig cfg;
  std::vector<MethodSummary> rows;
};

// Test mean squared error of the robust fit and the classical ridge
// baseline over cfg.reps replications; predictions on the clean test set
// are b + B' x without any imputation step.
MseTable run_mse(const ScenarioConfig& cfg, unsigned threads = 1);

struct CoverageRow {
  std::string method;
  double coverage = 0.0;    // fraction over reps x coefficient entries
  double mean_width = 0.0;
  long reps_used = 0;
  long failures = 0;
};

struct CoverageTable {
  ScenarioConfig cfg;
  std::vector<CoverageRow> rows;
};

// Empirical confidence-interval coverage for every entry of the coefficient
// matrix: bias-corrected bootstrap intervals against a classical
// least-squares percentile bootstrap on the same resampling scheme.
CoverageTable run_coverage(const ScenarioConfig& cfg, unsigned threads = 1);

// Trimmed root mean squared error over a residual matrix: per response
// column the H = ceil(alpha n) smallest squared residuals are kept.
double trim_rmse(const Matrix& residuals, double alpha);

// CSV rows (scenario, gamma, method, metric, value, reps, failures).
void write_mse_csv(const std::string& path, const MseTable& table);
void write_coverage_csv(const std::string& path, const CoverageTable& table);

// JSON manifest embedding the full configuration and a content hash of it.
void write_manifest(const std::string& path, const ScenarioConfig& cfg,
                    const std::string& command);

}  // namespace cellmr
