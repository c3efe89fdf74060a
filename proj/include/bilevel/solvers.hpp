#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "bilevel/lower_level.hpp"

namespace bilevel {

struct GDConfig {
  // Fixed step; nullopt means 1/L with L from LowerProblem::lipschitz_grad().
  std::optional<double> step;
  long max_iters = 10000;
  // Stop when ||grad_x Phi|| <= grad_tol. Zero disables the test.
  double grad_tol = 0.0;
  bool record_trajectory = false;
  // Consumed by callers that keep per-sample state between solves.
  bool warm_start = true;
};

struct GDResult {
  Signal x_final;
  long iters_run = 0;
  double final_grad_norm = 0.0;
  double step = 0.0;
  std::optional<std::vector<Signal>> trajectory;  // x^0 .. x^{iters_run}
};

// x^t = x^{t-1} - step * grad_x Phi(x^{t-1}) until the gradient tolerance or max_iters.
// Throws DivergenceError if an iterate stops being finite.
GDResult gd_minimize(const LowerProblem& p, const Signal& x0, const GDConfig& cfg);

double resolve_step(const LowerProblem& p, const GDConfig& cfg);

using LinearOperator = std::function<Signal(const Signal&)>;

struct CGResult {
  Signal x;
  long iters = 0;
  double residual_norm = 0.0;
  bool converged = false;
};

// Plain conjugate gradients from x = 0 for an SPD operator, stopping when
// ||H x - b|| <= tol. Throws SpdViolationError on a direction with p'Hp <= 0.
CGResult cg_solve(const LinearOperator& hess_action, const Signal& b, double tol, long max_iters);

}  // namespace bilevel
