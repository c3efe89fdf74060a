#include "bilevel/solvers.hpp"

#include <cmath>

#include "bilevel/errors.hpp"

namespace bilevel {

double resolve_step(const LowerProblem& p, const GDConfig& cfg) {
  if (cfg.step) {
    if (!(*cfg.step > 0.0)) throw ConfigError("lower-level step must be positive");
    return *cfg.step;
  }
  return 1.0 / p.lipschitz_grad();
}

GDResult gd_minimize(const LowerProblem& p, const Signal& x0, const GDConfig& cfg) {
  if (cfg.max_iters < 0) throw ConfigError("max_iters must be nonnegative");
  const double step = resolve_step(p, cfg);
  GDResult res{x0, 0, 0.0, step, std::nullopt};
  if (cfg.record_trajectory) res.trajectory.emplace().push_back(x0);

  Signal& x = res.x_final;
  for (long t = 0;; ++t) {
    Signal g = p.grad_x(x);
    const double gn = norm(g);
    if (!std::isfinite(gn))
      throw DivergenceError("lower-level gradient descent diverged at iteration " + std::to_string(t), t);
    res.final_grad_norm = gn;
    if ((cfg.grad_tol > 0.0 && gn <= cfg.grad_tol) || t == cfg.max_iters) break;
    axpy(-step, g, x);
    res.iters_run = t + 1;
    if (res.trajectory) res.trajectory->push_back(x);
  }
  return res;
}

CGResult cg_solve(const LinearOperator& hess_action, const Signal& b, double tol, long max_iters) {
  CGResult res{Signal(b.grid()), 0, norm(b), false};
  Signal r = b;
  double rr = dot(r, r);
  if (std::sqrt(rr) <= tol) {
    res.converged = true;
    return res;
  }
  Signal p = r;
  for (long k = 0; k < max_iters; ++k) {
    const Signal Hp = hess_action(p);
    const double pHp = dot(p, Hp);
    if (!(pHp > 0.0))
      throw SpdViolationError("conjugate gradients found non-positive curvature p'Hp = " + std::to_string(pHp) +
                              " at iteration " + std::to_string(k));
    const double alpha = rr / pHp;
    axpy(alpha, p, res.x);
    axpy(-alpha, Hp, r);
    const double rr_new = dot(r, r);
    res.iters = k + 1;
    res.residual_norm = std::sqrt(rr_new);
    if (res.residual_norm <= tol) {
      // The recursive residual drifts from b - Hx; confirm and restart if needed.
      r = b - hess_action(res.x);
      rr = dot(r, r);
      res.residual_norm = std::sqrt(rr);
      if (res.residual_norm <= tol) {
        res.converged = true;
        break;
      }
      p = r;
      continue;
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  return res;
}

}  // namespace bilevel
