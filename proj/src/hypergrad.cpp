#include "bilevel/hypergrad.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bilevel/errors.hpp"

namespace bilevel {

std::string method_name(HypergradMethod m) {
  switch (m) {
    case HypergradMethod::Minimizer: return "minimizer";
    case HypergradMethod::UnrolledReverse: return "reverse";
    case HypergradMethod::UnrolledForward: return "forward";
  }
  return "unknown";
}

HypergradMethod parse_method(const std::string& name) {
  if (name == "minimizer") return HypergradMethod::Minimizer;
  if (name == "reverse") return HypergradMethod::UnrolledReverse;
  if (name == "forward") return HypergradMethod::UnrolledForward;
  throw ConfigError("unknown hypergradient engine '" + name + "'");
}

HypergradResult hypergrad_minimizer(const LowerProblem& p, const UpperLoss& loss, const Signal& x_approx,
                                    const MinimizerOptions& opts) {
  HypergradResult res;
  res.method = HypergradMethod::Minimizer;
  res.lower_final_grad_norm = norm(p.grad_x(x_approx));
  if (res.lower_final_grad_norm > opts.warn_grad_norm)
    res.warning = "lower-level gradient norm " + std::to_string(res.lower_final_grad_norm) +
                  " exceeds " + std::to_string(opts.warn_grad_norm);

  const LossEval le = loss.evaluate(x_approx);
  if (!le.grad_x) throw ConfigError(loss_name(loss.spec()) + " loss has no x-gradient");
  res.loss_value = le.value;

  const HessianAt H = p.hessian_at(x_approx);
  const long max_iters = opts.cg_max_iters > 0 ? opts.cg_max_iters : 10 * static_cast<long>(x_approx.size());
  const CGResult cg = cg_solve([&](const Signal& v) { return H.apply(v); }, *le.grad_x, opts.cg_tol, max_iters);
  res.cg_residual = cg.residual_norm;
  res.cg_iters = cg.iters;

  res.grad = p.jac_adjoint_apply(x_approx, cg.x);
  for (double& g : res.grad) g = -g;
  return res;
}

HypergradResult hypergrad_unrolled_reverse(const LowerProblem& p, const UpperLoss& loss, const Signal& x0, long T,
                                           double step) {
  if (T < 0) throw ConfigError("unrolled iteration count must be nonnegative");
  GDConfig cfg;
  cfg.step = step;
  cfg.max_iters = T;
  cfg.grad_tol = 0.0;
  cfg.record_trajectory = true;
  const GDResult run = gd_minimize(p, x0, cfg);
  const std::vector<Signal>& xs = *run.trajectory;

  HypergradResult res;
  res.method = HypergradMethod::UnrolledReverse;
  res.lower_iters = run.iters_run;
  res.lower_final_grad_norm = run.final_grad_norm;
  const LossEval le = loss.evaluate(run.x_final);
  if (!le.grad_x) throw ConfigError(loss_name(loss.spec()) + " loss has no x-gradient");
  res.loss_value = le.value;

  res.grad.assign(p.layout().size(), 0.0);
  // delta holds (H_{t+1}' ... H_T') g; J_t' = -step (grad_{x theta} Phi(x^{t-1}))'.
  Signal delta = *le.grad_x;
  for (long t = T; t >= 1; --t) {
    const Signal& x_prev = xs[static_cast<std::size_t>(t - 1)];
    const ThetaVector jt = p.jac_adjoint_apply(x_prev, delta);
    for (std::size_t j = 0; j < jt.size(); ++j) res.grad[j] -= step * jt[j];
    if (t > 1) axpy(-step, p.hess_vec(x_prev, delta), delta);
  }
  return res;
}

UnrolledJacobian unrolled_forward_jacobian(const LowerProblem& p, const Signal& x0, long T, double step) {
  if (T < 0) throw ConfigError("unrolled iteration count must be nonnegative");
  const std::size_t P = p.layout().size();
  UnrolledJacobian out{x0, std::vector<Signal>(P, Signal(x0.grid()))};
  Signal& x = out.x_final;
  ThetaVector e(P, 0.0);
  for (long t = 1; t <= T; ++t) {
    const HessianAt H = p.hessian_at(x);
    for (std::size_t j = 0; j < P; ++j) {
      Signal& z = out.columns[j];
      // Z_t = (I - step H(x^{t-1})) Z_{t-1} - step (grad_{x theta} Phi(x^{t-1})) e_j
      Signal hz = H.apply(z);
      e[j] = 1.0;
      hz += p.jac_apply(x, e);
      e[j] = 0.0;
      axpy(-step, hz, z);
    }
    const Signal g = p.grad_x(x);
    if (!std::isfinite(norm(g)))
      throw DivergenceError("unrolled gradient descent diverged at iteration " + std::to_string(t - 1), t - 1);
    axpy(-step, g, x);
  }
  return out;
}

HypergradResult hypergrad_unrolled_forward(const LowerProblem& p, const UpperLoss& loss, const Signal& x0, long T,
                                           double step) {
  const UnrolledJacobian jac = unrolled_forward_jacobian(p, x0, T, step);
  HypergradResult res;
  res.method = HypergradMethod::UnrolledForward;
  res.lower_iters = T;
  res.lower_final_grad_norm = norm(p.grad_x(jac.x_final));
  const LossEval le = loss.evaluate(jac.x_final);
  if (!le.grad_x) throw ConfigError(loss_name(loss.spec()) + " loss has no x-gradient");
  res.loss_value = le.value;
  res.grad.resize(jac.columns.size());
  for (std::size_t j = 0; j < jac.columns.size(); ++j) res.grad[j] = dot(jac.columns[j], *le.grad_x);
  return res;
}

GradComparison grad_compare(const ThetaVector& g_est, const ThetaVector& g_ref) {
  if (g_est.size() != g_ref.size()) throw DimensionError("gradient lengths differ");
  double ee = 0.0, rr = 0.0, dd = 0.0;
  for (std::size_t i = 0; i < g_est.size(); ++i) {
    ee += g_est[i] * g_est[i];
    rr += g_ref[i] * g_ref[i];
    const double d = g_est[i] - g_ref[i];
    dd += d * d;
  }
  if (rr == 0.0) throw std::domain_error("reference gradient is zero; angle undefined");
  if (ee == 0.0) throw std::domain_error("estimated gradient is zero; angle undefined");
  // Kahan's form 2 atan2(|a - b|, |a + b|) on unit vectors stays accurate near 0 and pi.
  const double ne = std::sqrt(ee), nr = std::sqrt(rr);
  double diff = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < g_est.size(); ++i) {
    const double a = g_est[i] / ne, b = g_ref[i] / nr;
    diff += (a - b) * (a - b);
    sum += (a + b) * (a + b);
  }
  return {2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum)), std::sqrt(dd / rr)};
}

}  // namespace bilevel
