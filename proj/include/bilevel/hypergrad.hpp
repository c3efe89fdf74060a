#pragma once

// Hypergradient engines: implicit differentiation at an (approximate)
// minimizer, and exact differentiation of T unrolled gradient-descent steps in
// reverse or forward mode.

#include <optional>
#include <string>
#include <vector>

#include "bilevel/losses.hpp"
#include "bilevel/lower_level.hpp"
#include "bilevel/solvers.hpp"

namespace bilevel {

enum class HypergradMethod { Minimizer, UnrolledReverse, UnrolledForward };

std::string method_name(HypergradMethod m);
HypergradMethod parse_method(const std::string& name);

struct HypergradResult {
  ThetaVector grad;
  HypergradMethod method = HypergradMethod::Minimizer;
  long lower_iters = 0;
  double lower_final_grad_norm = 0.0;
  std::optional<double> cg_residual;
  long cg_iters = 0;
  double loss_value = 0.0;  // upper loss at the x the gradient was taken at
  std::string warning;      // non-empty when the lower solution looks unconverged
};

struct MinimizerOptions {
  double cg_tol = 1e-10;
  long cg_max_iters = 0;  // 0 selects 10 N
  // Warn when ||grad_x Phi(x_approx)|| exceeds this.
  double warn_grad_norm = 1e-3;
};

// grad = grad_theta l - (grad_{x theta} Phi)' q,  H q = grad_x l, all at x_approx.
// The losses carry no direct theta dependence, so grad_theta l = 0.
HypergradResult hypergrad_minimizer(const LowerProblem& p, const UpperLoss& loss, const Signal& x_approx,
                                    const MinimizerOptions& opts = {});

// Gradient of l(x^T(theta)) where x^t = x^{t-1} - step grad_x Phi(x^{t-1}; theta),
// with x^0 and step independent of theta. Stores the T iterates.
HypergradResult hypergrad_unrolled_reverse(const LowerProblem& p, const UpperLoss& loss, const Signal& x0, long T,
                                           double step);

// Same quantity, carrying Z_t = d x^t / d theta (N x P) forward; Z_0 = 0.
HypergradResult hypergrad_unrolled_forward(const LowerProblem& p, const UpperLoss& loss, const Signal& x0, long T,
                                           double step);

struct UnrolledJacobian {
  Signal x_final;
  std::vector<Signal> columns;  // column j is d x^T / d theta_j
};

UnrolledJacobian unrolled_forward_jacobian(const LowerProblem& p, const Signal& x0, long T, double step);

struct GradComparison {
  double angle_rad;
  double rel_norm_err;
};

// Throws std::domain_error when either vector is zero (angle undefined).
GradComparison grad_compare(const ThetaVector& g_est, const ThetaVector& g_ref);

}  // namespace bilevel
