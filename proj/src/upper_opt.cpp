#include "bilevel/upper_opt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <type_traits>

#include "bilevel/errors.hpp"
#include "bilevel/parallel.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double vnorm(const ThetaVector& v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return std::sqrt(s);
}

// True when ||next - cur|| / ||cur|| <= tol (tol > 0, cur nonzero).
bool small_change(const ThetaVector& cur, const ThetaVector& next, double tol) {
  if (!(tol > 0.0)) return false;
  const double base = vnorm(cur);
  if (base == 0.0) return false;
  double d = 0.0;
  for (std::size_t i = 0; i < cur.size(); ++i) d += (next[i] - cur[i]) * (next[i] - cur[i]);
  return std::sqrt(d) <= tol * base;
}

[[noreturn]] void rethrow_for_sample(const DivergenceError& e, std::size_t j) {
  throw DivergenceError("sample " + std::to_string(j) + ": " + e.what(), e.iteration());
}

double strong_convexity(const TrainSet& train) { return train.forward_model().spectral_bounds().sigmaN_sq; }

// Per-sample gradients reduced in sample order.
struct Reduced {
  double loss = 0.0;
  ThetaVector grad;
  long lower_iters = 0;
};

Reduced reduce(const std::vector<double>& losses, const std::vector<ThetaVector>& grads,
               const std::vector<long>& iters) {
  Reduced r;
  const double n = static_cast<double>(losses.size());
  r.grad.assign(grads.front().size(), 0.0);
  for (std::size_t j = 0; j < losses.size(); ++j) {
    r.loss += losses[j];
    for (std::size_t k = 0; k < r.grad.size(); ++k) r.grad[k] += grads[j][k];
    r.lower_iters += iters[j];
  }
  r.loss /= n;
  for (double& g : r.grad) g /= n;
  return r;
}

struct MinimizerRound {
  Reduced red;
  double step_lower = 0.0;
};

// Lower-level GD on every sample (x updated in place) followed by the
// minimizer-engine hypergradient at the resulting points.
MinimizerRound minimizer_round(const HyperParams& hp, const TrainSet& train, const LossSpec& spec,
                               std::vector<Signal>& x, const std::vector<Signal>& starts, const GDConfig& gd,
                               const MinimizerOptions& mo, int threads) {
  const std::size_t J = train.size();
  std::vector<double> losses(J);
  std::vector<ThetaVector> grads(J);
  std::vector<long> iters(J);
  std::vector<double> steps(J);
  for_each_index(J, threads, [&](std::size_t j) {
    const LowerProblem p = train.problem(j, hp);
    try {
      const GDResult r = gd_minimize(p, starts[j], gd);
      x[j] = r.x_final;
      iters[j] = r.iters_run;
      steps[j] = r.step;
    } catch (const DivergenceError& e) {
      rethrow_for_sample(e, j);
    }
    const HypergradResult h = hypergrad_minimizer(p, train.loss(j, spec), x[j], mo);
    grads[j] = h.grad;
    losses[j] = h.loss_value;
  });
  return {reduce(losses, grads, iters), steps.front()};
}

void check_box(const std::optional<ThetaVector>& lo, const std::optional<ThetaVector>& hi, std::size_t P) {
  if (lo.has_value() != hi.has_value()) throw ConfigError("box needs both lower and upper bounds");
  if (!lo) return;
  if (lo->size() != P || hi->size() != P) throw DimensionError("box bounds do not match the theta length");
  for (std::size_t i = 0; i < P; ++i)
    if ((*lo)[i] > (*hi)[i]) throw ConfigError("box lower bound exceeds upper bound");
}

Eigen::MatrixXd dense_hessian(const LowerProblem& p, const Signal& x) {
  const std::size_t N = x.size();
  const HessianAt H = p.hessian_at(x);
  Eigen::MatrixXd out(N, N);
  Signal e(x.grid());
  for (std::size_t i = 0; i < N; ++i) {
    e[i] = 1.0;
    const Signal col = H.apply(e);
    e[i] = 0.0;
    for (std::size_t r = 0; r < N; ++r) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = col[r];
  }
  return out;
}

Eigen::MatrixXd dense_mixed(const LowerProblem& p, const Signal& x) {
  const std::size_t N = x.size(), P = p.layout().size();
  Eigen::MatrixXd out(N, P);
  ThetaVector e(P, 0.0);
  for (std::size_t j = 0; j < P; ++j) {
    e[j] = 1.0;
    const Signal col = p.jac_apply(x, e);
    e[j] = 0.0;
    for (std::size_t r = 0; r < N; ++r) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = col[r];
  }
  return out;
}

Eigen::VectorXd to_eigen(const Signal& s) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) v(static_cast<Eigen::Index>(i)) = s[i];
  return v;
}

}  // namespace

TrainSet::TrainSet(ForwardModel A, std::vector<Sample> samples) : A_(std::move(A)), samples_(std::move(samples)) {
  if (samples_.empty()) throw ConfigError("training set is empty");
  for (const Sample& s : samples_)
    if (!(s.x_true.grid() == A_.grid()) || !(s.y.grid() == A_.grid()))
      throw DimensionError("training sample grid does not match the forward model");
}

LowerProblem TrainSet::problem(std::size_t j, const HyperParams& hp) const {
  return LowerProblem(A_, samples_.at(j).y, hp);
}

UpperLoss TrainSet::loss(std::size_t j, const LossSpec& spec) const {
  return UpperLoss(spec, A_, samples_.at(j).y, samples_.at(j).x_true);
}

Signal TrainSet::default_x0(std::size_t j) const { return A_.adjoint(samples_.at(j).y); }

std::vector<Signal> TrainSet::default_x0() const {
  std::vector<Signal> out;
  out.reserve(samples_.size());
  for (std::size_t j = 0; j < samples_.size(); ++j) out.push_back(default_x0(j));
  return out;
}

double PowerLawStep::at(long i) const { return a * std::pow(static_cast<double>(i), -exponent); }

long OptTrace::total_lower_iters() const {
  long s = 0;
  for (const auto& r : records) s += r.lower_iters;
  return s;
}

UpperEval evaluate_upper(const HyperParams& hp, const TrainSet& train, const LossSpec& spec, const GDConfig& solver,
                         const std::vector<Signal>* x0, int threads) {
  const std::size_t J = train.size();
  if (x0 && x0->size() != J) throw DimensionError("starting points do not match the training set");
  UpperEval out;
  out.per_sample.resize(J);
  out.x_hat.assign(J, Signal(train.grid()));
  std::vector<long> iters(J);
  for_each_index(J, threads, [&](std::size_t j) {
    const LowerProblem p = train.problem(j, hp);
    try {
      const GDResult r = gd_minimize(p, x0 ? (*x0)[j] : train.default_x0(j), solver);
      out.x_hat[j] = r.x_final;
      iters[j] = r.iters_run;
    } catch (const DivergenceError& e) {
      rethrow_for_sample(e, j);
    }
    const UpperLoss loss = train.loss(j, spec);
    if (loss_has_gradient(spec)) {
      out.per_sample[j] = loss.value(out.x_hat[j]);
    } else {
      const ForwardModel& A = train.forward_model();
      const Denoiser denoise = [&](const Signal& yy) {
        return gd_minimize(LowerProblem(A, yy, hp), A.adjoint(yy), solver).x_final;
      };
      out.per_sample[j] = loss.evaluate(out.x_hat[j], &denoise).value;
    }
  });
  for (std::size_t j = 0; j < J; ++j) {
    out.value += out.per_sample[j];
    out.lower_iters += iters[j];
  }
  out.value /= static_cast<double>(J);
  return out;
}

OptResult hoag(const HyperParams& init, const TrainSet& train, const LossSpec& spec, const HoagConfig& cfg) {
  if (cfg.max_upper < 0) throw ConfigError("max_upper must be nonnegative");
  if (!(cfg.eps0 > 0.0)) throw ConfigError("eps0 must be positive");
  init.validate(train.grid());
  const ThetaLayout layout(init);
  ThetaVector theta = layout.pack(init);
  const std::vector<Signal> cold = train.default_x0();
  std::vector<Signal> x = cold;
  const double mu = strong_convexity(train);

  double alpha = std::visit([](const auto& s) {
    using T = std::decay_t<decltype(s)>;
    if constexpr (std::is_same_v<T, ConstantStep>) return s.alpha;
    else if constexpr (std::is_same_v<T, AdaptiveStep>) return s.alpha0;
    else return s.at(1);
  }, cfg.step);
  if (!(alpha >= 0.0)) throw ConfigError("upper step must be nonnegative");

  OptResult res;
  res.stop_reason = "max_iters";
  double prev_loss = std::numeric_limits<double>::quiet_NaN();
  int increases = 0;
  for (long i = 1; i <= cfg.max_upper; ++i) {
    const auto t0 = Clock::now();
    const HyperParams hp = layout.unpack(init, theta);
    const double eps = cfg.eps0 / std::pow(static_cast<double>(i), cfg.eps_power);
    GDConfig gd;
    // ||x - xhat|| <= ||grad Phi|| / mu when the lower level is mu-strongly convex.
    gd.grad_tol = mu > 0.0 ? eps * mu : eps;
    gd.max_iters = cfg.max_lower_iters;
    MinimizerOptions mo;
    mo.cg_tol = eps;
    mo.cg_max_iters = cfg.cg_max_iters;
    const MinimizerRound round = minimizer_round(hp, train, spec, x, cfg.warm_start ? x : cold, gd, mo, cfg.threads);
    const Reduced& r = round.red;

    if (i > 1) {
      const bool increased = r.loss > prev_loss;
      increases = increased ? increases + 1 : 0;
      if (const auto* ad = std::get_if<AdaptiveStep>(&cfg.step)) {
        alpha *= increased ? ad->shrink : ad->grow;
      } else if (const auto* pl = std::get_if<PowerLawStep>(&cfg.step)) {
        alpha = pl->at(i);
      } else if (increases >= 10) {
        throw StepTooLargeError("upper loss increased for 10 consecutive iterations at constant step " +
                                std::to_string(alpha) + "; reduce the upper step");
      }
    }
    prev_loss = r.loss;

    ThetaVector next = theta;
    for (std::size_t k = 0; k < next.size(); ++k) next[k] -= alpha * r.grad[k];
    res.trace.records.push_back({i, r.loss, vnorm(r.grad), r.lower_iters, alpha, round.step_lower, elapsed_ms(t0), theta});
    const bool stop = small_change(theta, next, cfg.rel_change_tol);
    theta = std::move(next);
    if (stop) {
      res.stop_reason = "rel_change";
      break;
    }
  }
  res.params = layout.unpack(init, theta);
  res.x = std::move(x);
  return res;
}

OptResult ba(const HyperParams& init, const TrainSet& train, const LossSpec& spec, const BaConfig& cfg) {
  if (cfg.max_upper < 0) throw ConfigError("max_upper must be nonnegative");
  if (cfg.inner_iters < 1) throw ConfigError("inner_iters must be positive");
  if (!(cfg.step_upper >= 0.0)) throw ConfigError("upper step must be nonnegative");
  init.validate(train.grid());
  const ThetaLayout layout(init);
  ThetaVector theta = layout.pack(init);
  check_box(cfg.box_lo, cfg.box_hi, theta.size());
  const double mu = strong_convexity(train);
  if (cfg.lower_rule == LowerStepRule::TwoOverLPlusMu && !(mu > 0.0))
    throw ConfigError("lower step 2/(L+mu) needs a strongly convex lower level (mu > 0)");
  if (cfg.lower_rule == LowerStepRule::Fixed && !(cfg.lower_step > 0.0))
    throw ConfigError("fixed lower step must be positive");

  const std::vector<Signal> cold = train.default_x0();
  std::vector<Signal> x = cold;
  OptResult res;
  res.stop_reason = "max_iters";
  for (long i = 1; i <= cfg.max_upper; ++i) {
    const auto t0 = Clock::now();
    const HyperParams hp = layout.unpack(init, theta);
    GDConfig gd;
    gd.max_iters = cfg.inner_growth == InnerGrowth::Linear ? cfg.inner_iters * i : cfg.inner_iters;
    const double L = train.problem(0, hp).lipschitz_grad();
    switch (cfg.lower_rule) {
      case LowerStepRule::InverseL: gd.step = 1.0 / L; break;
      case LowerStepRule::TwoOverLPlusMu: gd.step = 2.0 / (L + mu); break;
      case LowerStepRule::Fixed: gd.step = cfg.lower_step; break;
    }
    MinimizerOptions mo;
    mo.cg_tol = cfg.cg_tol;
    const MinimizerRound round = minimizer_round(hp, train, spec, x, cfg.warm_start ? x : cold, gd, mo, cfg.threads);
    const Reduced& r = round.red;

    ThetaVector next = theta;
    for (std::size_t k = 0; k < next.size(); ++k) {
      next[k] -= cfg.step_upper * r.grad[k];
      if (cfg.box_lo) next[k] = std::clamp(next[k], (*cfg.box_lo)[k], (*cfg.box_hi)[k]);
    }
    res.trace.records.push_back(
        {i, r.loss, vnorm(r.grad), r.lower_iters, cfg.step_upper, round.step_lower, elapsed_ms(t0), theta});
    const bool stop = small_change(theta, next, cfg.rel_change_tol);
    theta = std::move(next);
    if (stop) {
      res.stop_reason = "rel_change";
      break;
    }
  }
  res.params = layout.unpack(init, theta);
  res.x = std::move(x);
  return res;
}

OptResult ttsa(const HyperParams& init, const TrainSet& train, const LossSpec& spec, const TtsaConfig& cfg) {
  if (cfg.max_iter < 0) throw ConfigError("max_iter must be nonnegative");
  if (cfg.batch < 1 || cfg.batch > train.size()) throw ConfigError("batch must be between 1 and the training set size");
  if (!(cfg.upper.a >= 0.0) || !(cfg.lower.a > 0.0)) throw ConfigError("TTSA step scales must be nonnegative");
  init.validate(train.grid());
  const ThetaLayout layout(init);
  ThetaVector theta = layout.pack(init);
  std::vector<Signal> x = train.default_x0();
  std::vector<std::size_t> order(train.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
  Rng rng(cfg.seed);
  MinimizerOptions mo;
  mo.cg_tol = cfg.cg_tol;

  OptResult res;
  res.stop_reason = "max_iters";
  for (long i = 1; i <= cfg.max_iter; ++i) {
    const auto t0 = Clock::now();
    const HyperParams hp = layout.unpack(init, theta);
    // Partial Fisher-Yates: the first `batch` entries of order are the sample.
    for (std::size_t k = 0; k < cfg.batch; ++k) std::swap(order[k], order[k + rng.below(order.size() - k)]);
    const double step_low = cfg.lower.at(i) / train.problem(0, hp).lipschitz_grad();
    const double step_up = cfg.upper.at(i);

    std::vector<double> losses(cfg.batch);
    std::vector<ThetaVector> grads(cfg.batch);
    std::vector<long> iters(cfg.batch, 1);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const std::size_t j = order[b];
      const LowerProblem p = train.problem(j, hp);
      const Signal g = p.grad_x(x[j]);
      if (!std::isfinite(norm(g)))
        rethrow_for_sample(DivergenceError("lower-level iterate diverged at iteration " + std::to_string(i), i), j);
      axpy(-step_low, g, x[j]);
      const HypergradResult h = hypergrad_minimizer(p, train.loss(j, spec), x[j], mo);
      grads[b] = h.grad;
      losses[b] = h.loss_value;
    }
    const Reduced r = reduce(losses, grads, iters);
    ThetaVector next = theta;
    for (std::size_t k = 0; k < next.size(); ++k) next[k] -= step_up * r.grad[k];
    res.trace.records.push_back({i, r.loss, vnorm(r.grad), r.lower_iters, step_up, step_low, elapsed_ms(t0), theta});
    const bool stop = small_change(theta, next, cfg.rel_change_tol);
    theta = std::move(next);
    if (stop) {
      res.stop_reason = "rel_change";
      break;
    }
  }
  res.params = layout.unpack(init, theta);
  res.x = std::move(x);
  return res;
}

Eigen::MatrixXd project_eigen_floor(const Eigen::MatrixXd& H, double mu) {
  const Eigen::MatrixXd S = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(mu);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd project_frobenius(const Eigen::MatrixXd& M, double cap) {
  const double n = M.norm();
  return n > cap ? Eigen::MatrixXd(M * (cap / n)) : M;
}

StableState stable_init(const HyperParams& init, const TrainSet& train, const std::vector<Signal>* x0) {
  if (train.grid().size() > kStableMaxSize)
    throw DimensionError("STABLE is dense-only and limited to " + std::to_string(kStableMaxSize) + " pixels");
  if (x0 && x0->size() != train.size()) throw DimensionError("starting points do not match the training set");
  init.validate(train.grid());
  StableState st{init, {}};
  for (std::size_t j = 0; j < train.size(); ++j) {
    const Signal x = x0 ? (*x0)[j] : train.default_x0(j);
    st.samples.push_back(StableSampleState{x, false, x, init, {}, {}});
  }
  return st;
}

StableStepInfo stable_step(StableState& state, const TrainSet& train, const LossSpec& spec, std::size_t sample,
                           const StableConfig& cfg) {
  if (train.grid().size() > kStableMaxSize)
    throw DimensionError("STABLE is dense-only and limited to " + std::to_string(kStableMaxSize) + " pixels");
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  if (!(cfg.mix_cap > 0.0)) throw ConfigError("mix_cap must be positive");
  const double mu = cfg.mu > 0.0 ? cfg.mu : strong_convexity(train);
  if (!(mu > 0.0)) throw ConfigError("STABLE needs a positive eigenvalue floor mu");
  StableSampleState& s = state.samples.at(sample);

  const ThetaLayout layout(state.params);
  const ThetaVector theta = layout.pack(state.params);
  const LowerProblem p = train.problem(sample, state.params);
  Eigen::MatrixXd H = dense_hessian(p, s.x);
  Eigen::MatrixXd M = dense_mixed(p, s.x);
  if (s.primed) {
    const LowerProblem pp = train.problem(sample, s.params_prev);
    H += (1.0 - cfg.tau) * (s.H - dense_hessian(pp, s.x_prev));
    M += (1.0 - cfg.tau) * (s.M - dense_mixed(pp, s.x_prev));
  }
  H = project_eigen_floor(H, mu);
  M = project_frobenius(M, cfg.mix_cap);
  const Eigen::LLT<Eigen::MatrixXd> llt(H);

  const LossEval le = train.loss(sample, spec).evaluate(s.x);
  if (!le.grad_x) throw ConfigError(loss_name(spec) + " loss has no x-gradient");
  const Eigen::VectorXd g = -(M.transpose() * llt.solve(to_eigen(*le.grad_x)));

  ThetaVector next = theta;
  Eigen::VectorXd dtheta(static_cast<Eigen::Index>(theta.size()));
  for (std::size_t k = 0; k < next.size(); ++k) {
    next[k] -= cfg.step_upper * g(static_cast<Eigen::Index>(k));
    dtheta(static_cast<Eigen::Index>(k)) = next[k] - theta[k];
  }
  const double step_lower = cfg.step_lower ? *cfg.step_lower : 1.0 / p.lipschitz_grad();
  const Signal gx = p.grad_x(s.x);
  const Eigen::VectorXd corr = llt.solve(M * dtheta);
  Signal x_next = s.x;
  for (std::size_t r = 0; r < x_next.size(); ++r)
    x_next[r] -= step_lower * gx[r] + corr(static_cast<Eigen::Index>(r));
  if (!x_next.all_finite()) throw DivergenceError("STABLE lower iterate diverged", 0);

  s.x_prev = s.x;
  s.params_prev = state.params;
  s.H = std::move(H);
  s.M = std::move(M);
  s.primed = true;
  s.x = std::move(x_next);
  state.params = layout.unpack(state.params, next);
  return {le.value, g.norm(), step_lower};
}

OptResult stable(const HyperParams& init, const TrainSet& train, const LossSpec& spec, const StableConfig& cfg) {
  if (cfg.max_iter < 0) throw ConfigError("max_iter must be nonnegative");
  StableState st = stable_init(init, train);
  const ThetaLayout layout(init);
  Rng rng(cfg.seed);
  OptResult res;
  res.stop_reason = "max_iters";
  for (long i = 1; i <= cfg.max_iter; ++i) {
    const auto t0 = Clock::now();
    const ThetaVector theta = layout.pack(st.params);
    const std::size_t j = train.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(train.size()));
    const StableStepInfo info = stable_step(st, train, spec, j, cfg);
    const ThetaVector next = layout.pack(st.params);
    res.trace.records.push_back(
        {i, info.loss, info.grad_norm, 1, cfg.step_upper, info.step_lower, elapsed_ms(t0), theta});
    if (small_change(theta, next, cfg.rel_change_tol)) {
      res.stop_reason = "rel_change";
      break;
    }
  }
  res.params = st.params;
  for (auto& s : st.samples) res.x.push_back(std::move(s.x));
  return res;
}

OptResult adam_or_gd_upper(const HyperParams& init, const TrainSet& train, const LossSpec& spec,
                           const DriverConfig& cfg) {
  if (cfg.max_upper < 0) throw ConfigError("max_upper must be nonnegative");
  if (!(cfg.step >= 0.0)) throw ConfigError("upper step must be nonnegative");
  if (cfg.unroll_T < 0) throw ConfigError("unroll_T must be nonnegative");
  init.validate(train.grid());
  const ThetaLayout layout(init);
  ThetaVector theta = layout.pack(init);
  const std::size_t P = theta.size(), J = train.size();
  const std::vector<Signal> cold = train.default_x0();
  std::vector<Signal> x = cold;
  const double unroll_step = cfg.unroll_step ? *cfg.unroll_step : 1.0 / train.problem(0, init).lipschitz_grad();
  if (!(unroll_step > 0.0)) throw ConfigError("unrolled step must be positive");
  ThetaVector m(P, 0.0), v(P, 0.0);

  OptResult res;
  res.stop_reason = "max_iters";
  for (long i = 1; i <= cfg.max_upper; ++i) {
    const auto t0 = Clock::now();
    const HyperParams hp = layout.unpack(init, theta);
    Reduced r;
    double step_lower = unroll_step;
    if (cfg.engine == HypergradMethod::Minimizer) {
      GDConfig gd;
      gd.grad_tol = cfg.lower_tol;
      gd.max_iters = cfg.max_lower_iters;
      MinimizerOptions mo;
      mo.cg_tol = cfg.cg_tol;
      const MinimizerRound round = minimizer_round(hp, train, spec, x, cfg.warm_start ? x : cold, gd, mo, cfg.threads);
      r = round.red;
      step_lower = round.step_lower;
    } else {
      std::vector<double> losses(J);
      std::vector<ThetaVector> grads(J);
      std::vector<long> iters(J, cfg.unroll_T);
      for_each_index(J, cfg.threads, [&](std::size_t j) {
        const LowerProblem p = train.problem(j, hp);
        const UpperLoss loss = train.loss(j, spec);
        try {
          const HypergradResult h = cfg.engine == HypergradMethod::UnrolledReverse
                                        ? hypergrad_unrolled_reverse(p, loss, cold[j], cfg.unroll_T, unroll_step)
                                        : hypergrad_unrolled_forward(p, loss, cold[j], cfg.unroll_T, unroll_step);
          grads[j] = h.grad;
          losses[j] = h.loss_value;
        } catch (const DivergenceError& e) {
          rethrow_for_sample(e, j);
        }
      });
      r = reduce(losses, grads, iters);
    }

    ThetaVector next = theta;
    if (cfg.optimizer == UpperOptimizer::GD) {
      for (std::size_t k = 0; k < P; ++k) next[k] -= cfg.step * r.grad[k];
    } else {
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(i));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(i));
      for (std::size_t k = 0; k < P; ++k) {
        m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * r.grad[k];
        v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * r.grad[k] * r.grad[k];
        next[k] -= cfg.step * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
      }
    }
    res.trace.records.push_back({i, r.loss, vnorm(r.grad), r.lower_iters, cfg.step, step_lower, elapsed_ms(t0), theta});
    const bool stop = small_change(theta, next, cfg.rel_change_tol);
    theta = std::move(next);
    if (stop) {
      res.stop_reason = "rel_change";
      break;
    }
  }
  res.params = layout.unpack(init, theta);
  res.x = std::move(x);
  return res;
}

std::size_t select_best(const std::vector<GridRow>& table) {
  if (table.empty()) throw ConfigError("grid table is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.size(); ++i)
    if (table[i].loss < table[best].loss) best = i;
  return best;
}

GridSearchResult grid_search(const std::vector<double>& beta0_grid, const HyperParams& base, const TrainSet& train,
                             const LossSpec& spec, const GDConfig& solver, int threads) {
  if (beta0_grid.empty()) throw ConfigError("beta0 grid is empty");
  GridSearchResult out;
  for (std::size_t i = 0; i < beta0_grid.size(); ++i) {
    HyperParams hp = base;
    hp.beta0 = beta0_grid[i];
    const double v = evaluate_upper(hp, train, spec, solver, nullptr, threads).value;
    out.table.push_back({beta0_grid[i], v});
  }
  out.best_index = select_best(out.table);
  out.best_beta0 = out.table[out.best_index].beta0;
  return out;
}

HyperParams initialize_params(const InitSpec& spec, const TrainSet& train) {
  HyperParams hp;
  hp.potential = spec.potential;
  hp.learn = spec.learn;
  if (spec.filters) {
    hp.filters = *spec.filters;
    hp.betas.assign(hp.filters.size(), 0.0);
  } else {
    Rng rng(spec.seed);
    for (std::size_t k = 0; k < spec.filter_count; ++k) {
      std::size_t n = 1;
      for (int e : spec.extents) {
        if (e < 1) throw ConfigError("filter extents must be positive");
        n *= static_cast<std::size_t>(e);
      }
      std::vector<double> taps(n);
      double mean = 0.0;
      for (double& t : taps) {
        t = rng.normal();
        mean += t;
      }
      mean /= static_cast<double>(n);
      double nrm = 0.0;
      for (double& t : taps) {
        if (n > 1) t -= mean;
        nrm += t * t;
      }
      nrm = std::sqrt(nrm);
      for (double& t : taps) t /= nrm;
      hp.filters.emplace_back(spec.extents, std::move(taps));
      hp.betas.push_back(0.0);
    }
  }
  if (spec.betas) {
    if (spec.betas->size() != hp.filters.size()) throw ConfigError("initial betas and filters differ in length");
    hp.betas = *spec.betas;
  }
  if (spec.beta0) {
    hp.beta0 = *spec.beta0;
  } else {
    double data = 0.0, reg = 0.0;
    const ForwardModel& A = train.forward_model();
    for (std::size_t j = 0; j < train.size(); ++j) {
      const Signal x0 = train.default_x0(j);
      data += norm(x0);
      // With data A x0 the fidelity term has zero gradient at x0, leaving the regularizer's.
      reg += norm(LowerProblem(A, A.apply(x0), hp).grad_x(x0));
    }
    hp.beta0 = (data > 0.0 && reg > 0.0) ? std::log(data / reg) : 0.0;
  }
  hp.validate(train.grid());
  return hp;
}

}  // namespace bilevel
