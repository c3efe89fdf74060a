#include "bilevel/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "bilevel/errors.hpp"
#include "bilevel/parallel.hpp"

namespace bilevel {

namespace {

DatasetGradient mean_of(const std::vector<ThetaVector>& grads, const std::vector<double>& losses,
                        const std::vector<long>& iters) {
  DatasetGradient out;
  out.grad.assign(grads.front().size(), 0.0);
  for (std::size_t j = 0; j < grads.size(); ++j) {
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += grads[j][i];
    out.loss += losses[j];
    out.lower_iters += iters[j];
  }
  const double n = static_cast<double>(grads.size());
  for (double& g : out.grad) g /= n;
  out.loss /= n;
  return out;
}

}  // namespace

DatasetGradient dataset_hypergrad_minimizer(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                                            const GDConfig& solver, const MinimizerOptions& mo, int threads) {
  const std::size_t J = train.size();
  std::vector<ThetaVector> grads(J);
  std::vector<double> losses(J);
  std::vector<long> iters(J);
  for_each_index(J, threads, [&](std::size_t j) {
    const LowerProblem p = train.problem(j, hp);
    const GDResult r = gd_minimize(p, train.default_x0(j), solver);
    const HypergradResult h = hypergrad_minimizer(p, train.loss(j, loss), r.x_final, mo);
    grads[j] = h.grad;
    losses[j] = h.loss_value;
    iters[j] = r.iters_run;
  });
  return mean_of(grads, losses, iters);
}

DatasetGradient dataset_hypergrad_unrolled(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                                           HypergradMethod method, long T, double step, int threads) {
  if (method == HypergradMethod::Minimizer) throw ConfigError("expected an unrolled engine");
  const std::size_t J = train.size();
  std::vector<ThetaVector> grads(J);
  std::vector<double> losses(J);
  std::vector<long> iters(J, T);
  for_each_index(J, threads, [&](std::size_t j) {
    const LowerProblem p = train.problem(j, hp);
    const UpperLoss l = train.loss(j, loss);
    const HypergradResult h = method == HypergradMethod::UnrolledReverse
                                  ? hypergrad_unrolled_reverse(p, l, train.default_x0(j), T, step)
                                  : hypergrad_unrolled_forward(p, l, train.default_x0(j), T, step);
    grads[j] = h.grad;
    losses[j] = h.loss_value;
  });
  return mean_of(grads, losses, iters);
}

ThetaVector dataset_fd_gradient(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                                const GDConfig& solver, double h, int threads) {
  const ThetaLayout layout(hp);
  const ThetaVector theta = layout.pack(hp);
  ThetaVector g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    ThetaVector tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    const double fp = evaluate_upper(layout.unpack(hp, tp), train, loss, solver, nullptr, threads).value;
    const double fm = evaluate_upper(layout.unpack(hp, tm), train, loss, solver, nullptr, threads).value;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

ToleranceSweep tolerance_sweep(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                               const std::vector<double>& tolerances, double reference_tol, long max_lower_iters,
                               double cg_tol, double slack, int threads) {
  MinimizerOptions mo;
  mo.cg_tol = cg_tol;
  mo.warn_grad_norm = std::numeric_limits<double>::infinity();
  GDConfig gd;
  gd.max_iters = max_lower_iters;
  gd.grad_tol = reference_tol;
  ToleranceSweep out;
  out.reference = dataset_hypergrad_minimizer(hp, train, loss, gd, mo, threads).grad;
  double prev = std::numeric_limits<double>::infinity();
  for (double tol : tolerances) {
    gd.grad_tol = tol;
    const DatasetGradient g = dataset_hypergrad_minimizer(hp, train, loss, gd, mo, threads);
    const GradComparison c = grad_compare(g.grad, out.reference);
    ToleranceRow row;
    row.tol = tol;
    row.angle_deg = c.angle_rad * 180.0 / std::numbers::pi;
    row.rel_err = c.rel_norm_err;
    row.lower_iters = g.lower_iters;
    row.monotone = row.angle_deg <= (1.0 + slack) * prev;
    prev = row.angle_deg;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace bilevel
