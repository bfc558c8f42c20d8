#include "cellmr/mkernel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cellmr/errors.hpp"
#include "cellmr/stats.hpp"

namespace cellmr {

TanhRho::TanhRho(double b_, double c_, double q2_) : b(b_), c(c_), q2(q2_) {
  if (!(b > 0.0) || !(c > b) || !(q2 > 0.0))
    throw InvalidConfigError("TanhRho: need 0 < b < c and q2 > 0");
  q1 = b / std::tanh(q2 * (c - b));
  d_const = 0.5 * b * b + (q1 / q2) * std::log(std::cosh(q2 * (c - b)));
}

double TanhRho::rho(double z) const {
  const double az = std::abs(z);
  if (az <= b) return 0.5 * z * z;
  if (az <= c) return d_const - (q1 / q2) * std::log(std::cosh(q2 * (c - az)));
  return d_const;
}

double TanhRho::psi(double z) const {
  const double az = std::abs(z);
  if (az <= b) return z;
  if (az <= c) return std::copysign(q1 * std::tanh(q2 * (c - az)), z);
  return 0.0;
}

double TanhRho::weight(double z) const {
  const double az = std::abs(z);
  if (az <= b) return 1.0;
  if (az >= c) return 0.0;
  return q1 * std::tanh(q2 * (c - az)) / az;
}

namespace {

// int_b^c tanh(s * log(c / x)) * phi(x) dx by composite Gauss-Legendre.
double blend_gauss_integral(double b, double c, double s) {
  // 5-point Gauss-Legendre nodes and weights on [-1, 1].
  static const double gx[] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                              0.5384693101056831, 0.9061798459386640};
  static const double gw[] = {0.2369268850561891, 0.4786286704993665,
                              0.5688888888888889, 0.4786286704993665,
                              0.2369268850561891};
  const int panels = 64;
  const double h = (c - b) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double lo = b + p * h;
    const double mid = lo + 0.5 * h;
    for (int g = 0; g < 5; ++g) {
      const double x = mid + 0.5 * h * gx[g];
      total += gw[g] * std::tanh(s * std::log(c / x)) * normal_pdf(x);
    }
  }
  return total * 0.5 * h;
}

}  // namespace

TanhChi::TanhChi(double b_, double c_, double sharpness) : b(b_), c(c_) {
  if (!(b > 0.0) || !(c > b) || !(sharpness > 0.0))
    throw InvalidConfigError("TanhChi: need 0 < b < c and positive sharpness");
  const double tau = std::tanh(sharpness * std::log(c / b));
  const double pb = 2.0 * normal_cdf(b) - 1.0;
  const double J = blend_gauss_integral(b, c, sharpness);
  // E[chi(Z)] = -2 b phi(b) + a * pb + 2 * a1 * J with a = a1 * tau - (b^2 - 1);
  // solving E[chi(Z)] = 0 for the amplitude a1 is linear.
  const double a1 =
      (2.0 * b * normal_pdf(b) + (b * b - 1.0) * pb) / (tau * pb + 2.0 * J);
  a_const = a1 * tau - (b * b - 1.0);
  A = a1 * a1 / (k - 1.0);
  B = 2.0 * sharpness * std::sqrt(A / (k - 1.0));
}

double TanhChi::amplitude() const { return std::sqrt(A * (k - 1.0)); }

double TanhChi::sharpness() const { return 0.5 * std::sqrt((k - 1.0) * B * B / A); }

double TanhChi::chi(double x) const {
  const double ax = std::abs(x);
  if (ax <= b) return x * x - 1.0 + a_const;
  if (ax < c) return amplitude() * std::tanh(sharpness() * std::log(c / ax));
  return 0.0;
}

MScaleResult mscale(const std::vector<double>& values, const TanhChi& chi) {
  if (values.empty()) throw EmptyInputError("mscale: empty sample");
  const std::size_t n = values.size();
  double maxabs = 0.0;
  std::size_t zeros = 0;
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteInputError("mscale: non-finite value");
    maxabs = std::max(maxabs, std::abs(v));
    if (v == 0.0) ++zeros;
  }
  if (2 * zeros > n || maxabs == 0.0) return {0.0, true};

  const double inv_n = 1.0 / static_cast<double>(n);
  auto g = [&](double sigma) {
    double s = 0.0;
    for (double v : values) s += chi.chi(v / sigma);
    return s * inv_n;
  };

  // Bracket the outermost root: g < 0 for sigma large (chi(0) = a - 1 < 0),
  // so scan down a multiplicative grid for the first strictly positive value.
  double hi = 10.0 * maxabs;
  for (int i = 0; i < 60 && g(hi) >= 0.0; ++i) hi *= 10.0;
  const double sigma_min = std::numeric_limits<double>::epsilon() * maxabs;

  double lo = 0.0;
  double upper = hi;
  bool found = false;
  double sigma = hi;
  while (sigma > sigma_min) {
    double next = sigma * 0.9;
    const double gv = g(next);
    if (gv > 0.0) {
      lo = next;
      upper = sigma;
      found = true;
      break;
    }
    if (gv == 0.0) return {next, false};
    sigma = next;
  }
  if (!found) return {0.0, true};

  // Bisection keeps g(lo) > 0, g(upper) <= 0; midpoints are arithmetic so the
  // whole procedure commutes exactly with scaling the sample by powers of two.
  while (upper - lo > 1e-12 * upper) {
    const double mid = 0.5 * (lo + upper);
    const double gv = g(mid);
    if (gv > 0.0)
      lo = mid;
    else if (gv < 0.0)
      upper = mid;
    else
      return {mid, false};
  }
  return {0.5 * (lo + upper), false};
}

MScaleResult mscale(const std::vector<double>& values) {
  static const TanhChi default_chi;
  return mscale(values, default_chi);
}

double scale_family_floor(const std::vector<double>& sigmas, double data_magnitude) {
  double floor_value = 1e-3 * median(sigmas);
  if (!(floor_value > 0.0)) floor_value = 1e-6 * std::max(1.0, data_magnitude);
  return floor_value;
}

}  // namespace cellmr
