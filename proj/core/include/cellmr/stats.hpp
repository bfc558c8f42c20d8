#pragma once

#include <vector>

namespace cellmr {

// Regularized lower incomplete gamma function P(a, x).
double gamma_p(double a, double x);

// Inverse of gamma_p in x for fixed a: returns x with P(a, x) = p.
double gamma_p_inv(double a, double p);

double chi2_cdf(double x, double df);
double chi2_quantile(double p, double df);

// Standard normal cdf, density and quantile.
double normal_cdf(double x);
double normal_pdf(double x);
double normal_quantile(double p);

// Median of a sample (copies, does not reorder the input).  Even length
// averages the two middle order statistics.
double median(std::vector<double> v);

// Order statistic based empirical quantile: value at 1-based rank
// ceil(p * n), the convention used for percentile intervals.
double quantile_ceil(std::vector<double> v, double p);

}  // namespace cellmr
