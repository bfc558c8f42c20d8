#pragma once

#include <vector>

namespace cellmr {

// Hyperbolic tangent redescending loss.  Quadratic up to b, smooth tanh
// blend on (b, c], constant beyond c, so the derivative vanishes for
// gross outliers.  q1 is recomputed from q2 and (b, c) so that the
// derivative is continuous at b; the nominal tabulated value 1.54 for the
// default (b, c, q2) = (1.5, 4, 0.86) is kept for reference as q1_nominal.
struct TanhRho {
  double b = 1.5;
  double c = 4.0;
  double q1 = 0.0;
  double q2 = 0.86;
  double d_const = 0.0;

  static constexpr double q1_nominal = 1.54;

  TanhRho() : TanhRho(1.5, 4.0, 0.86) {}
  TanhRho(double b_, double c_, double q2_);

  double rho(double z) const;
  double psi(double z) const;
  // psi(z) / z with the continuous extension weight(0) = 1.  Lies in [0, 1].
  double weight(double z) const;
};

// Companion function for the M-scale.  Equal to x^2 - 1 + a_const on
// [-b, b], a tanh blend decaying to zero on b < |x| <= c, and zero beyond.
// The blend parameters (A, B, k) are fixed at construction so that
//  (i)  the function is continuous at |x| = b (this determines a_const),
//  (ii) E[chi(Z)] = 0 for Z standard normal, making the resulting scale
//       match the standard deviation under clean Gaussian data,
//  (iii) the blend sharpness on the log scale equals the psi transition
//        sharpness q2.
struct TanhChi {
  double b = 1.5;
  double c = 4.0;
  double a_const = 0.0;
  double A = 0.0;
  double B = 0.0;
  double k = 4.5;

  TanhChi() : TanhChi(1.5, 4.0, 0.86) {}
  TanhChi(double b_, double c_, double sharpness);

  double chi(double x) const;

  // sqrt(A * (k - 1)): amplitude of the tanh blend.
  double amplitude() const;
  // (1/2) * sqrt((k - 1) * B^2 / A): sharpness of the blend on log scale.
  double sharpness() const;
};

// Loss kernel handle used by the fitting code.  The quadratic variant exists
// only to reduce the robust fit to its classical least squares counterpart in
// tests; its weight is the constant 2, which cancels in every weighted solve.
struct RhoKernel {
  enum class Kind { tanh, quadratic };

  Kind kind = Kind::tanh;
  TanhRho params;

  static RhoKernel make_tanh(double b = 1.5, double c = 4.0, double q2 = 0.86) {
    return RhoKernel{Kind::tanh, TanhRho(b, c, q2)};
  }
  static RhoKernel make_quadratic() { return RhoKernel{Kind::quadratic, TanhRho()}; }

  double rho(double z) const { return kind == Kind::tanh ? params.rho(z) : z * z; }
  double psi(double z) const { return kind == Kind::tanh ? params.psi(z) : 2.0 * z; }
  double weight(double z) const { return kind == Kind::tanh ? params.weight(z) : 2.0; }
};

struct MScaleResult {
  double sigma = 0.0;
  bool degenerate = false;
};

// Robust M-scale: the outermost root sigma of mean(chi(z_i / sigma)) = 0.
// No centering is applied; callers pass residuals or pre-centered values.
// Returns sigma = 0 with the degenerate flag when more than half the entries
// are exactly zero or when no sign change exists in the bracket.
MScaleResult mscale(const std::vector<double>& values, const TanhChi& chi);
MScaleResult mscale(const std::vector<double>& values);

// Floor applied to a family of related scale estimates (for example the
// per-column residual scales of one fit): 1e-3 times the family median,
// with an absolute fallback when the median itself vanishes.
double scale_family_floor(const std::vector<double>& sigmas, double data_magnitude);

}  // namespace cellmr
