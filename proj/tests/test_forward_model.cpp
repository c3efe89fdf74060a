#include "bilevel/errors.hpp"
#include "bilevel/forward_model.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace bilevel;
using namespace testing_support;

namespace {
Signal line(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Signal(Grid::line(n), std::move(v));
}

std::vector<ForwardModel> all_variants(const Grid& g, Rng& rng) {
  Signal m(g);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0) ? 0.0 : 1.0;
  return {ForwardModel::identity(g), ForwardModel::mask(m),
          ForwardModel::circulant(random_filter(g.rank() == 1 ? std::vector<int>{3} : std::vector<int>{2, 2}, rng), g)};
}
}  // namespace

TEST_CASE("fwd_apply examples") {
  const Signal x = line({1, 2, 3, 4});
  CHECK(ForwardModel::identity(Grid::line(4)).apply(x).vector() == x.vector());
  CHECK(ForwardModel::mask(line({1, 0, 1, 0})).apply(x).vector() == std::vector<double>{1, 0, 3, 0});
  CHECK(ForwardModel::circulant(Filter::line({1, -1}), Grid::line(4)).apply(x).vector() ==
        std::vector<double>{-3, 1, 1, 1});
}

TEST_CASE("fwd_adjoint examples") {
  const Signal u = line({0.5, -1, 2, 7});
  CHECK(ForwardModel::identity(Grid::line(4)).adjoint(u).vector() == u.vector());
  const ForwardModel M = ForwardModel::mask(line({1, 0, 1, 0}));
  CHECK(M.adjoint(u).vector() == M.apply(u).vector());
}

TEST_CASE("invalid forward models") {
  CHECK_THROWS_AS(ForwardModel::mask(line({0, 0, 0})), ConfigError);
  CHECK_THROWS_AS(ForwardModel::mask(line({1, 0.5})), ConfigError);
  CHECK_THROWS_AS(ForwardModel::circulant(Filter::line({1, 2, 3}), Grid::line(2)), DimensionError);
  CHECK_THROWS_AS(ForwardModel::identity(Grid::line(3)).apply(line({1, 2})), DimensionError);
}

TEST_CASE("spectral bounds examples") {
  const auto id = ForwardModel::identity(Grid::line(4)).spectral_bounds();
  CHECK(id.sigma1_sq == 1.0);
  CHECK(id.sigmaN_sq == 1.0);
  const auto mk = ForwardModel::mask(line({1, 0, 1, 0})).spectral_bounds();
  CHECK(mk.sigma1_sq == 1.0);
  CHECK(mk.sigmaN_sq == 0.0);
  const auto cc = ForwardModel::circulant(Filter::line({1, -1}), Grid::line(4)).spectral_bounds();
  CHECK(cc.sigma1_sq == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(cc.sigmaN_sq < 1e-28);
}

TEST_CASE("adjoint identity and spectral sandwich for every variant") {
  Rng rng(17);
  for (const Grid& g : {Grid::line(12), Grid::plane(4, 5)}) {
    for (const ForwardModel& A : all_variants(g, rng)) {
      const SpectralBounds sb = A.spectral_bounds();
      for (int trial = 0; trial < 10; ++trial) {
        const Signal x = random_signal(g, rng), u = random_signal(g, rng);
        const double lhs = dot(A.apply(x), u), rhs = dot(x, A.adjoint(u));
        CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
        const double ax2 = dot(A.apply(x), A.apply(x)), x2 = dot(x, x);
        CHECK(sb.sigmaN_sq * x2 <= ax2 + 1e-10);
        CHECK(ax2 <= sb.sigma1_sq * x2 + 1e-10);
      }
    }
  }
}
