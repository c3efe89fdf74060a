#pragma once

#include "bilevel/signal.hpp"

namespace bilevel {

// Scalar sparsity potential phi applied elementwise to filter responses.
//
//   CornerRounded1Norm:  phi(z) = sqrt(z^2 + eps^2)   (a hyperbola; |z| with a rounded corner)
//   Quadratic:           phi(z) = z^2 / 2             (linear-Gaussian oracle case)
struct Potential {
  enum class Kind { CornerRounded1Norm, Quadratic };

  Kind kind = Kind::CornerRounded1Norm;
  double eps = 0.01;

  static Potential corner_rounded(double eps);
  static Potential quadratic() { return Potential{Kind::Quadratic, 0.0}; }

  bool operator==(const Potential&) const = default;
};

struct PhiValues {
  double phi;
  double dphi;
  double ddphi;
};

PhiValues phi_derivatives(const Potential& p, double z);
double phi_third_derivative(const Potential& p, double z);

// Elementwise over a signal.
Signal phi_apply(const Potential& p, const Signal& z);
Signal dphi_apply(const Potential& p, const Signal& z);
Signal ddphi_apply(const Potential& p, const Signal& z);

struct PotentialBounds {
  double L_phi;   // sup |phi'|
  double L_dphi;  // sup phi''  (Lipschitz constant of phi')
};

// Throws UnboundedConstantError when sup |phi'| is infinite (Quadratic).
PotentialBounds phi_bounds(const Potential& p);
double sup_abs_dphi(const Potential& p);
double sup_ddphi(const Potential& p);
// sup |phi'''|, the Lipschitz constant of phi''. Found by a grid search over z.
double sup_abs_dddphi(const Potential& p);

}  // namespace bilevel
