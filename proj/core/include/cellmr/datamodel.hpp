#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "cellmr/mkernel.hpp"

namespace cellmr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Numeric data with cellwise missingness.  Missing cells hold NaN in values
// and 0 in mask; every row must keep at least one observed cell.
struct DataMatrix {
  Matrix values;
  MaskMatrix mask;
  std::vector<std::string> column_names;

  long rows() const { return values.rows(); }
  long cols() const { return values.cols(); }
  bool observed(long i, long j) const { return mask(i, j) != 0; }
  long observed_in_row(long i) const;

  // Builds a fully observed matrix (mask all ones, default column names).
  static DataMatrix complete(const Matrix& values);
  // Builds from values where NaN marks a missing cell.
  static DataMatrix from_values_with_nan(const Matrix& values);

  // Throws if shapes disagree, a finite value sits under mask 0 / NaN under
  // mask 1, or some row has no observed cell.
  void validate() const;

  DataMatrix select_rows(const std::vector<long>& idx) const;
  DataMatrix select_cols(long first, long count) const;
};

// Concatenates columns of two matrices with equal row counts.
DataMatrix hstack(const DataMatrix& x, const DataMatrix& y);

// Columnwise robust location and scale learned on training data.
struct Standardizer {
  Vector medians;  // kept for reference; standardize does not subtract them,
                   // the fitted center absorbs location
  Vector scales;   // robust M-scales of the median-centered columns

  long cols() const { return scales.size(); }

  // Divides each column by its scale.  Mask and missing cells are preserved.
  DataMatrix apply(const DataMatrix& data) const;
  // Multiplies each column by its scale.
  DataMatrix invert(const DataMatrix& data) const;
};

// Learns the standardizer on data and returns (scaled data, standardizer).
// A column whose M-scale is degenerate raises DegenerateColumnError.
std::pair<DataMatrix, Standardizer> standardize(const DataMatrix& data,
                                                const TanhChi& chi = TanhChi());

// Maps location/scatter estimates of scaled data back to original units:
// (mu, sigma) -> (D mu, D sigma D) with D = diag(scales).
std::pair<Vector, Matrix> destandardize_cov(const Standardizer& s, const Vector& mu,
                                            const Matrix& sigma);

// CSV with a header row; "NA", "nan" (any case) and empty fields are missing.
DataMatrix read_csv(const std::string& path);
void write_csv(const std::string& path, const DataMatrix& data, int precision = 17);

}  // namespace cellmr
