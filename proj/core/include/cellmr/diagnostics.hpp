#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmr/regression.hpp"

namespace cellmr {

enum class CaseClass { regular, good_leverage, vertical_outlier, bad_leverage };

const char* case_class_name(CaseClass c);

// Cell flag codes: -1 / 0 / +1 for a standardized residual below, inside, or
// above the +-cutoff band; kMissingCell marks unobserved cells.
inline constexpr int kMissingCell = 2;

// Outlier-map and cellmap quantities of one fitted model on a data set.
struct DiagnosticsReport {
  Vector rd;          // residual distances
  Vector pd;          // predictor distances of the imputed rows
  Vector t;           // casewise total deviations under the joint model
  Vector point_size;  // 1 - mean observed cell weight, in [0, 1]
  Vector case_shade;  // 0 below cutoff_t, 1 above 1.5 * cutoff_t, linear between
  double cutoff_rd = 0.0;
  double cutoff_pd = 0.0;
  double cutoff_t = 0.0;
  double cutoff_cell = 0.0;
  std::vector<CaseClass> case_class;
  Matrix cell_residuals_x;  // standardized, 0 where missing
  Matrix cell_residuals_y;
  Eigen::MatrixXi cell_flags_x;  // -1 / 0 / +1, kMissingCell where unobserved
  Eigen::MatrixXi cell_flags_y;
  bool eps_damped = false;   // residual scatter needed a ridge to invert
  bool xcov_damped = false;  // predictor scatter needed a ridge to invert
};

// Monte-Carlo 99th percentile of the casewise deviation t under clean
// standard normal data of the given shape: ceil(n_sim / n) independent fits
// are pooled and the order-statistic quantile of all t values is returned.
double simulate_t_cutoff(long n, long d, int k, long n_sim, std::uint64_t seed);

// Distances, four-class labels, cell residual tables.  Rows with no observed
// response cells get rd = 0 and are classified by pd alone; rows with a
// partially observed response use the observed sub-block of the residual
// scatter.  t_cutoff is typically simulate_t_cutoff output.
DiagnosticsReport diagnose(const RegressionModel& model, const DataMatrix& x,
                           const DataMatrix& y, double t_cutoff);

// CSV emitters.  Row ids are 1-based.
void write_outlier_map(const std::string& path, const DiagnosticsReport& report);
void write_cellmap_x(const std::string& path, const DiagnosticsReport& report,
                     const std::vector<std::string>& names);
void write_cellmap_y(const std::string& path, const DiagnosticsReport& report,
                     const std::vector<std::string>& names);

}  // namespace cellmr
