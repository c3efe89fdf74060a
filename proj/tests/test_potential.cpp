#include <cmath>

#include "bilevel/errors.hpp"
#include "bilevel/potential.hpp"
#include "doctest.h"

using namespace bilevel;

TEST_CASE("phi_derivatives examples") {
  const PhiValues at0 = phi_derivatives(Potential::corner_rounded(0.1), 0.0);
  CHECK(at0.phi == doctest::Approx(0.1));
  CHECK(at0.dphi == 0.0);
  CHECK(at0.ddphi == doctest::Approx(10.0));

  const PhiValues at1 = phi_derivatives(Potential::corner_rounded(0.01), 1.0);
  CHECK(at1.phi == doctest::Approx(std::sqrt(1.0001)).epsilon(1e-15));
  CHECK(at1.dphi == doctest::Approx(1.0 / std::sqrt(1.0001)).epsilon(1e-15));
  CHECK(at1.ddphi == doctest::Approx(0.0001 / std::pow(1.0001, 1.5)).epsilon(1e-14));

  const PhiValues q = phi_derivatives(Potential::quadratic(), 3.0);
  CHECK(q.phi == 4.5);
  CHECK(q.dphi == 3.0);
  CHECK(q.ddphi == 1.0);
}

TEST_CASE("phi_bounds") {
  const PotentialBounds b1 = phi_bounds(Potential::corner_rounded(0.1));
  CHECK(b1.L_phi == 1.0);
  CHECK(b1.L_dphi == doctest::Approx(10.0));
  const PotentialBounds b2 = phi_bounds(Potential::corner_rounded(0.5));
  CHECK(b2.L_phi == 1.0);
  CHECK(b2.L_dphi == doctest::Approx(2.0));
  CHECK(sup_ddphi(Potential::quadratic()) == 1.0);
  CHECK_THROWS_AS(phi_bounds(Potential::quadratic()), UnboundedConstantError);
  CHECK_THROWS_AS(Potential::corner_rounded(0.0), ConfigError);
}

TEST_CASE("third-derivative bound matches its closed form") {
  // |phi'''| peaks at z = eps/2 with value (3/2) eps^3 / ((5/4) eps^2)^{5/2}.
  for (double eps : {0.01, 0.1, 1.0}) {
    const double closed = 1.5 * std::pow(eps, 3) / std::pow(1.25 * eps * eps, 2.5);
    CHECK(sup_abs_dddphi(Potential::corner_rounded(eps)) == doctest::Approx(closed).epsilon(1e-9));
  }
  CHECK(sup_abs_dddphi(Potential::quadratic()) == 0.0);
}

TEST_CASE("derivatives agree with central differences") {
  const double h = 1e-5;
  for (const Potential& p : {Potential::corner_rounded(0.5), Potential::corner_rounded(1.0), Potential::quadratic()}) {
    for (double z = -5.0; z <= 5.0; z += 0.125) {
      const PhiValues v = phi_derivatives(p, z);
      const double fd1 = (phi_derivatives(p, z + h).phi - phi_derivatives(p, z - h).phi) / (2 * h);
      const double fd2 = (phi_derivatives(p, z + h).dphi - phi_derivatives(p, z - h).dphi) / (2 * h);
      const double fd3 = (phi_derivatives(p, z + h).ddphi - phi_derivatives(p, z - h).ddphi) / (2 * h);
      CHECK(std::abs(fd1 - v.dphi) <= 1e-7);
      CHECK(std::abs(fd2 - v.ddphi) <= 1e-7);
      CHECK(std::abs(fd3 - phi_third_derivative(p, z)) <= 1e-7);
    }
  }
}

TEST_CASE("corner-rounded range, asymptote and symmetry") {
  for (double eps : {0.01, 0.1}) {
    const Potential p = Potential::corner_rounded(eps);
    for (double z = -3.0; z <= 3.0; z += 0.01) {
      const PhiValues v = phi_derivatives(p, z), m = phi_derivatives(p, -z);
      CHECK(std::abs(v.dphi) < 1.0);
      CHECK(v.ddphi > 0.0);
      CHECK(v.ddphi <= 1.0 / eps * (1 + 1e-15));
      CHECK(v.phi >= std::abs(z));
      CHECK(m.phi == v.phi);
      CHECK(m.dphi == -v.dphi);
      CHECK(m.ddphi == v.ddphi);
    }
    for (double z : {100 * eps, -100 * eps}) {
      const double gap = phi_derivatives(p, z).phi - std::abs(z);
      CHECK(gap >= 0.0);
      CHECK(gap <= eps * eps / std::abs(z));
    }
  }
}
