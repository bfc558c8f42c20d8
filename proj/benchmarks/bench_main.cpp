// Micro-benchmarks for the hot paths: the scale estimator, the robust PCA
// fit, the subset-based scatter, and the trained fast covariance pipeline.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cellmr/cellcov.hpp"
#include "cellmr/cellpca.hpp"
#include "cellmr/datamodel.hpp"
#include "cellmr/fastcellcov.hpp"
#include "cellmr/mcd.hpp"
#include "cellmr/mkernel.hpp"
#include "cellmr/rng.hpp"

namespace {

cellmr::Matrix gaussian(long n, long d, std::uint64_t seed) {
  auto rng = cellmr::make_rng(seed, "bench");
  std::normal_distribution<double> normal(0.0, 1.0);
  cellmr::Matrix out(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) out(i, j) = normal(rng);
  return out;
}

void bm_mscale(benchmark::State& state) {
  const cellmr::Matrix draws = gaussian(static_cast<long>(state.range(0)), 1, 1);
  std::vector<double> v(draws.data(), draws.data() + draws.rows());
  const cellmr::TanhChi chi;
  for (auto _ : state) benchmark::DoNotOptimize(cellmr::mscale(v, chi).sigma);
}

void bm_cellpca_fit(benchmark::State& state) {
  const cellmr::DataMatrix data =
      cellmr::DataMatrix::complete(gaussian(state.range(0), 6, 2));
  auto [z, std_] = cellmr::standardize(data);
  for (auto _ : state) benchmark::DoNotOptimize(cellmr::cellpca_fit(z, 2).converged);
}

void bm_mcd_fit(benchmark::State& state) {
  const cellmr::Matrix points = gaussian(state.range(0), 2, 3);
  for (auto _ : state) benchmark::DoNotOptimize(cellmr::mcd_fit(points).singular);
}

void bm_fastcov_evaluate(benchmark::State& state) {
  const cellmr::DataMatrix data =
      cellmr::DataMatrix::complete(gaussian(state.range(0), 6, 4));
  const cellmr::CellCovResult pipe = cellmr::cellcov(data, 2);
  const cellmr::FastCellCovModel model = cellmr::fastcellcov_train(data, pipe);
  for (auto _ : state)
    benchmark::DoNotOptimize(cellmr::fastcellcov_evaluate(model, data).mu);
}

}  // namespace

BENCHMARK(bm_mscale)->Arg(200)->Arg(1000);
BENCHMARK(bm_cellpca_fit)->Arg(200);
BENCHMARK(bm_mcd_fit)->Arg(200);
BENCHMARK(bm_fastcov_evaluate)->Arg(200);

BENCHMARK_MAIN();
