#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "cellmr/datamodel.hpp"

namespace cellmr {

enum class ContaminationKind { casewise, cellwise };

// Finite-epsilon contamination scheme.  c_point lives in the joint
// predictor/response space (length p + q).
struct ContaminationSpec {
  ContaminationKind kind = ContaminationKind::casewise;
  Vector c_point;
  double epsilon = 0.02;
  int draws = 5;
  std::uint64_t seed = 0;
};

// Scalar statistic of a fit on (x, y); exceptions propagate to the caller.
using FitFunctional = std::function<double(const DataMatrix&, const DataMatrix&)>;

// Empirical influence: (T(contaminated) - T(base)) / epsilon averaged over
// spec.draws independent contamination draws.  Casewise contamination
// replaces ceil(epsilon n) distinct rows by c_point; cellwise contamination
// replaces each cell independently with probability epsilon.  Which rows or
// cells are hit depends only on (seed, draw), never on c_point, so surfaces
// over a grid of contamination points are comparable.
double empirical_if(const DataMatrix& x, const DataMatrix& y,
                    const FitFunctional& functional, const ContaminationSpec& spec);

// Influence surface over a grid: coordinates dim1 and dim2 of spec.c_point
// sweep grid1 x grid2; entry (i, j) uses (grid1[i], grid2[j]).
Matrix if_grid(const DataMatrix& x, const DataMatrix& y,
               const FitFunctional& functional, const ContaminationSpec& spec,
               const std::vector<double>& grid1, const std::vector<double>& grid2,
               long dim1, long dim2, unsigned threads = 1);

// Evenly spaced grid of `count` points over [lo, hi].
std::vector<double> linspace(double lo, double hi, int count);

// CSV rows (c1, c2, if_value) in row-major grid order.
void write_if_surface(const std::string& path, const std::vector<double>& grid1,
                      const std::vector<double>& grid2, const Matrix& values);

// Canonical scalar functionals for the influence showcase: the (j, l)
// coefficient of the robust fit and of the classical ridge baseline.
FitFunctional cellmr_coef_functional(int k, double lambda, long j = 0, long l = 0);
FitFunctional classical_coef_functional(double lambda = 0.0, long j = 0, long l = 0);

}  // namespace cellmr
