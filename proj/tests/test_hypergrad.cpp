#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bilevel/errors.hpp"
#include "bilevel/hypergrad.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace bilevel;
using namespace testing_support;

namespace {

struct Instance {
  LowerProblem problem;
  UpperLoss loss;
};

Instance random_instance(const Grid& g, std::vector<std::vector<int>> filter_extents, Rng& rng, LearnMask learn = {},
                         double eps = 0.1) {
  HyperParams hp;
  hp.potential = Potential::corner_rounded(eps);
  hp.learn = learn;
  hp.beta0 = -0.5;
  for (auto& e : filter_extents) {
    hp.betas.push_back(0.3 * rng.normal());
    hp.filters.push_back(random_filter(e, rng));
  }
  const Signal x_true = random_signal(g, rng);
  const Signal y = x_true + random_signal(g, rng, 0.3);
  const ForwardModel A = ForwardModel::identity(g);
  return {LowerProblem(A, y, hp), UpperLoss(MseLoss{}, A, y, x_true)};
}

Signal solve_lower(const LowerProblem& p, double tol) {
  GDConfig cfg;
  cfg.grad_tol = tol;
  cfg.max_iters = 1000000;
  return gd_minimize(p, p.data(), cfg).x_final;
}

// Upper loss as a function of theta through an accurately solved lower level.
double end_to_end(const Instance& inst, const ThetaVector& theta, double tol) {
  const HyperParams hp = inst.problem.layout().unpack(inst.problem.params(), theta);
  return inst.loss.value(solve_lower(inst.problem.with_params(hp), tol));
}

Signal unrolled_iterate(const LowerProblem& p, const ThetaVector& theta, const Signal& x0, long T, double step) {
  const LowerProblem q = p.with_params(p.layout().unpack(p.params(), theta));
  GDConfig cfg;
  cfg.step = step;
  cfg.max_iters = T;
  return gd_minimize(q, x0, cfg).x_final;
}

}  // namespace

TEST_CASE("scalar quadratic hypergradient") {
  HyperParams hp;
  hp.potential = Potential::quadratic();
  hp.betas = {0.0};
  hp.filters = {Filter::delta(1)};
  const Grid g = Grid::line(1);
  const ForwardModel A = ForwardModel::identity(g);
  const LowerProblem p(A, Signal(g, {2.0}), hp);
  const UpperLoss loss(MseLoss{}, A, Signal(g, {2.0}), Signal(g, {1.5}));
  const HypergradResult r = hypergrad_minimizer(p, loss, Signal(g, {1.0}));
  REQUIRE(r.grad.size() == 2);
  CHECK(r.grad[0] == doctest::Approx(0.25).epsilon(1e-14));
  // d/dc of 1/2 (y / (1 + c^2) - 1.5)^2 at c = 1
  CHECK(r.grad[1] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(r.loss_value == doctest::Approx(0.125));
  CHECK(r.warning.empty());
  REQUIRE(r.cg_residual);
}

TEST_CASE("zero residual gives a zero hypergradient") {
  Rng rng(1);
  const Grid g = Grid::line(16);
  const Instance inst = random_instance(g, {{3}}, rng);
  const Signal x = random_signal(g, rng);
  const UpperLoss loss(MseLoss{}, inst.problem.forward_model(), inst.problem.data(), x);
  const HypergradResult r = hypergrad_minimizer(inst.problem, loss, x);
  for (double v : r.grad) CHECK(v == 0.0);
  CHECK_FALSE(r.warning.empty());  // x is nowhere near the lower-level minimizer
}

TEST_CASE("no unrolled iterations means no dependence on theta") {
  Rng rng(2);
  const Grid g = Grid::line(12);
  const Instance inst = random_instance(g, {{2}, {3}}, rng);
  const double step = 1.0 / inst.problem.lipschitz_grad();
  for (const auto& r : {hypergrad_unrolled_reverse(inst.problem, inst.loss, inst.problem.data(), 0, step),
                        hypergrad_unrolled_forward(inst.problem, inst.loss, inst.problem.data(), 0, step)}) {
    REQUIRE(r.grad.size() == inst.problem.layout().size());
    for (double v : r.grad) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(hypergrad_unrolled_reverse(inst.problem, inst.loss, inst.problem.data(), -1, step), ConfigError);
}

TEST_CASE("reverse and forward unrolling agree") {
  Rng rng(3);
  const LearnMask all{true, true, true};
  const std::vector<Instance> cases = {random_instance(Grid::line(32), {{3}, {2}}, rng, all),
                                       random_instance(Grid::plane(6, 7), {{2, 2}, {1, 3}}, rng)};
  for (const Instance& inst : cases) {
    const double step = 1.0 / inst.problem.lipschitz_grad();
    const HypergradResult rev = hypergrad_unrolled_reverse(inst.problem, inst.loss, inst.problem.data(), 50, step);
    const HypergradResult fwd = hypergrad_unrolled_forward(inst.problem, inst.loss, inst.problem.data(), 50, step);
    CHECK(rev.lower_iters == 50);
    CHECK(vec_rel_err(rev.grad, fwd.grad) <= 1e-10);
    CHECK(rev.loss_value == fwd.loss_value);
  }
}

TEST_CASE("forward jacobian columns match finite differences of the unrolled map") {
  Rng rng(4);
  const LearnMask all{true, true, true};
  const Instance inst = random_instance(Grid::line(20), {{3}, {2}}, rng, all);
  const LowerProblem& p = inst.problem;
  const double step = 1.0 / p.lipschitz_grad();
  const long T = 15;
  const UnrolledJacobian jac = unrolled_forward_jacobian(p, p.data(), T, step);
  const ThetaVector theta = p.layout().pack(p.params());
  const double h = 1e-6;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    ThetaVector tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    Signal fd = unrolled_iterate(p, tp, p.data(), T, step) - unrolled_iterate(p, tm, p.data(), T, step);
    fd *= 1.0 / (2 * h);
    INFO(p.layout().coordinate_name(j));
    CHECK(norm(jac.columns[j] - fd) <= 1e-5 * norm(fd));
  }
}

TEST_CASE("long unrolling converges to the minimizer engine") {
  Rng rng(5);
  const Instance inst = random_instance(Grid::line(24), {{3}, {2}}, rng);
  const LowerProblem& p = inst.problem;
  const Signal xhat = solve_lower(p, 1e-13);
  const HypergradResult ref = hypergrad_minimizer(p, inst.loss, xhat);
  const double step = 1.0 / p.lipschitz_grad();
  long T = 100;
  GDConfig cfg;
  cfg.step = step;
  for (;; T *= 2) {
    cfg.max_iters = T;
    if (norm(gd_minimize(p, p.data(), cfg).x_final - xhat) <= 1e-9) break;
    REQUIRE(T < 1000000);
  }
  const HypergradResult unr = hypergrad_unrolled_reverse(p, inst.loss, p.data(), T, step);
  CHECK(vec_rel_err(unr.grad, ref.grad) <= 1e-6);
}

TEST_CASE("minimizer hypergradient matches end-to-end finite differences") {
  Rng rng(6);
  const LearnMask all{true, true, true};
  const Instance inst = random_instance(Grid::line(64), {{3}, {3}}, rng, all);
  const LowerProblem& p = inst.problem;
  const double tol = 1e-10;
  const HypergradResult r = hypergrad_minimizer(p, inst.loss, solve_lower(p, tol));
  CHECK(r.warning.empty());
  const ThetaVector theta = p.layout().pack(p.params());
  ThetaVector fd(theta.size());
  const double h = 1e-4;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    ThetaVector tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    fd[j] = (end_to_end(inst, tp, tol) - end_to_end(inst, tm, tol)) / (2 * h);
  }
  CHECK(vec_rel_err(r.grad, fd) <= 1e-5);
}

TEST_CASE("minimizer gradient improves as the lower level tightens") {
  Rng rng(7);
  const Instance inst = random_instance(Grid::line(64), {{2}, {3}}, rng);
  const LowerProblem& p = inst.problem;
  const ThetaVector ref = hypergrad_minimizer(p, inst.loss, solve_lower(p, 1e-12)).grad;
  double prev = std::numeric_limits<double>::infinity();
  for (double tol : {1e-1, 1e-2, 1e-4, 1e-8}) {
    const double angle = grad_compare(hypergrad_minimizer(p, inst.loss, solve_lower(p, tol)).grad, ref).angle_rad;
    CAPTURE(tol);
    CHECK(angle <= prev);
    prev = angle;
  }
  CHECK(prev <= 1e-5);
}

TEST_CASE("minimizer gradient depends only on the point it is evaluated at") {
  Rng rng(8);
  const Instance inst = random_instance(Grid::line(16), {{3}}, rng);
  const Signal x = solve_lower(inst.problem, 1e-6);
  const HypergradResult a = hypergrad_minimizer(inst.problem, inst.loss, x);
  const HypergradResult b = hypergrad_minimizer(inst.problem.with_params(inst.problem.params()), inst.loss, x);
  CHECK(a.grad == b.grad);
}

TEST_CASE("grad_compare examples") {
  const ThetaVector g{0.3, -1.2, 2.0};
  GradComparison c = grad_compare(g, g);
  CHECK(c.angle_rad == 0.0);
  CHECK(c.rel_norm_err == 0.0);
  c = grad_compare({-0.3, 1.2, -2.0}, g);
  CHECK(c.angle_rad == doctest::Approx(std::numbers::pi).epsilon(1e-15));
  CHECK(c.rel_norm_err == doctest::Approx(2.0).epsilon(1e-15));
  c = grad_compare({1.0, 0.0}, {0.0, 1.0});
  CHECK(c.angle_rad == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
  CHECK(c.rel_norm_err == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(grad_compare({1.0, 2.0}, {0.0, 0.0}), std::domain_error);
  CHECK_THROWS_AS(grad_compare({0.0, 0.0}, {1.0, 2.0}), std::domain_error);
}

TEST_CASE("engine names round-trip") {
  for (auto m : {HypergradMethod::Minimizer, HypergradMethod::UnrolledReverse, HypergradMethod::UnrolledForward})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("adjoint"), ConfigError);
}
