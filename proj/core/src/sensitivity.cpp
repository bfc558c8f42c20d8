#include "cellmr/sensitivity.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "cellmr/errors.hpp"
#include "cellmr/parallel.hpp"
#include "cellmr/regression.hpp"
#include "cellmr/rng.hpp"

namespace cellmr {

namespace {

void set_cell(DataMatrix& m, long i, long j, double value) {
  m.values(i, j) = value;
  m.mask(i, j) = 1;
}

// One contamination draw applied to copies of (x, y).
void contaminate(DataMatrix& xc, DataMatrix& yc, const ContaminationSpec& spec,
                 std::uint64_t draw) {
  const long n = xc.rows(), p = xc.cols(), q = yc.cols();
  auto rng = make_rng(spec.seed, "if_draw", draw);
  if (spec.kind == ContaminationKind::casewise) {
    const long m = static_cast<long>(std::ceil(spec.epsilon * static_cast<double>(n)));
    std::vector<long> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0L);
    for (long t = 0; t < m; ++t) {
      std::uniform_int_distribution<long> pick(t, n - 1);
      std::swap(idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(pick(rng))]);
      const long row = idx[static_cast<std::size_t>(t)];
      for (long j = 0; j < p; ++j) set_cell(xc, row, j, spec.c_point[j]);
      for (long j = 0; j < q; ++j) set_cell(yc, row, j, spec.c_point[p + j]);
    }
  } else {
    std::bernoulli_distribution hit(spec.epsilon);
    for (long i = 0; i < n; ++i) {
      for (long j = 0; j < p; ++j)
        if (hit(rng)) set_cell(xc, i, j, spec.c_point[j]);
      for (long j = 0; j < q; ++j)
        if (hit(rng)) set_cell(yc, i, j, spec.c_point[p + j]);
    }
  }
}

}  // namespace

double empirical_if(const DataMatrix& x, const DataMatrix& y,
                    const FitFunctional& functional, const ContaminationSpec& spec) {
  if (!(spec.epsilon > 0.0 && spec.epsilon <= 0.1))
    throw InvalidConfigError("empirical_if: epsilon must lie in (0, 0.1]");
  if (spec.draws < 1) throw InvalidConfigError("empirical_if: draws must be >= 1");
  if (spec.c_point.size() != x.cols() + y.cols())
    throw DimensionMismatchError("empirical_if: contamination point has wrong length");
  const double base = functional(x, y);
  double acc = 0.0;
  for (int g = 0; g < spec.draws; ++g) {
    DataMatrix xc = x, yc = y;
    contaminate(xc, yc, spec, static_cast<std::uint64_t>(g));
    acc += (functional(xc, yc) - base) / spec.epsilon;
  }
  return acc / static_cast<double>(spec.draws);
}

Matrix if_grid(const DataMatrix& x, const DataMatrix& y,
               const FitFunctional& functional, const ContaminationSpec& spec,
               const std::vector<double>& grid1, const std::vector<double>& grid2,
               long dim1, long dim2, unsigned threads) {
  const long d = x.cols() + y.cols();
  if (dim1 < 0 || dim1 >= d || dim2 < 0 || dim2 >= d || dim1 == dim2)
    throw InvalidConfigError("if_grid: bad sweep dimensions");
  const long n1 = static_cast<long>(grid1.size()), n2 = static_cast<long>(grid2.size());
  Matrix values(n1, n2);
  parallel_for(n1 * n2, threads, [&](long cell) {
    const long i = cell / n2, j = cell % n2;
    ContaminationSpec local = spec;
    local.c_point[dim1] = grid1[static_cast<std::size_t>(i)];
    local.c_point[dim2] = grid2[static_cast<std::size_t>(j)];
    values(i, j) = empirical_if(x, y, functional, local);
  });
  return values;
}

std::vector<double> linspace(double lo, double hi, int count) {
  if (count < 2) throw InvalidConfigError("linspace: need at least two points");
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (count - 1);
  return g;
}

void write_if_surface(const std::string& path, const std::vector<double>& grid1,
                      const std::vector<double>& grid2, const Matrix& values) {
  if (values.rows() != static_cast<long>(grid1.size()) ||
      values.cols() != static_cast<long>(grid2.size()))
    throw DimensionMismatchError("if surface: grid and value shapes disagree");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "c1,c2,if_value\n";
  for (long i = 0; i < values.rows(); ++i)
    for (long j = 0; j < values.cols(); ++j)
      out << grid1[static_cast<std::size_t>(i)] << ',' << grid2[static_cast<std::size_t>(j)]
          << ',' << values(i, j) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

FitFunctional cellmr_coef_functional(int k, double lambda, long j, long l) {
  return [k, lambda, j, l](const DataMatrix& x, const DataMatrix& y) {
    return cellmr_fit(x, y, k, lambda).model.B(j, l);
  };
}

FitFunctional classical_coef_functional(double lambda, long j, long l) {
  return [lambda, j, l](const DataMatrix& x, const DataMatrix& y) {
    return classical_fit(x, y, lambda).B(j, l);
  };
}

}  // namespace cellmr
