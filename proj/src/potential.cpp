#include "bilevel/potential.hpp"

#include <cmath>

#include "bilevel/errors.hpp"

namespace bilevel {

Potential Potential::corner_rounded(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("corner rounding eps must be positive");
  return Potential{Kind::CornerRounded1Norm, eps};
}

PhiValues phi_derivatives(const Potential& p, double z) {
  if (p.kind == Potential::Kind::Quadratic) return {0.5 * z * z, z, 1.0};
  const double e2 = p.eps * p.eps;
  const double r2 = z * z + e2;
  const double r = std::sqrt(r2);
  return {r, z / r, e2 / (r2 * r)};
}

double phi_third_derivative(const Potential& p, double z) {
  if (p.kind == Potential::Kind::Quadratic) return 0.0;
  const double e2 = p.eps * p.eps;
  const double r2 = z * z + e2;
  return -3.0 * e2 * z / (r2 * r2 * std::sqrt(r2));
}

namespace {
template <class F>
Signal map_signal(const Signal& z, F f) {
  Signal out(z.grid());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = f(z[i]);
  return out;
}
}  // namespace

Signal phi_apply(const Potential& p, const Signal& z) {
  return map_signal(z, [&](double v) { return phi_derivatives(p, v).phi; });
}
Signal dphi_apply(const Potential& p, const Signal& z) {
  return map_signal(z, [&](double v) { return phi_derivatives(p, v).dphi; });
}
Signal ddphi_apply(const Potential& p, const Signal& z) {
  return map_signal(z, [&](double v) { return phi_derivatives(p, v).ddphi; });
}

double sup_abs_dphi(const Potential& p) {
  if (p.kind == Potential::Kind::Quadratic) throw UnboundedConstantError("sup|phi'| is unbounded for the quadratic potential");
  return 1.0;
}

double sup_ddphi(const Potential& p) {
  if (p.kind == Potential::Kind::Quadratic) return 1.0;
  return 1.0 / p.eps;
}

PotentialBounds phi_bounds(const Potential& p) { return {sup_abs_dphi(p), sup_ddphi(p)}; }

namespace {
// max_u |phi'''| for eps = 1; the CR1N value scales as 1/eps^2.
double unit_third_derivative_sup() {
  static const double value = [] {
    const Potential unit{Potential::Kind::CornerRounded1Norm, 1.0};
    double best = 0.0;
    // Coarse sweep then a refinement around the best grid point.
    double arg = 0.0;
    for (int i = 0; i <= 20000; ++i) {
      const double z = 1e-3 * i;
      const double v = std::abs(phi_third_derivative(unit, z));
      if (v > best) best = v, arg = z;
    }
    for (int i = -10000; i <= 10000; ++i) {
      const double z = arg + 1e-7 * i;
      best = std::max(best, std::abs(phi_third_derivative(unit, z)));
    }
    return best;
  }();
  return value;
}
}  // namespace

double sup_abs_dddphi(const Potential& p) {
  if (p.kind == Potential::Kind::Quadratic) return 0.0;
  return unit_third_derivative_sup() / (p.eps * p.eps);
}

}  // namespace bilevel
