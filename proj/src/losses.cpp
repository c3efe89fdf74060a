#include "bilevel/losses.hpp"

#include <cmath>
#include <limits>

#include "bilevel/errors.hpp"
#include "bilevel/potential.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const Signal& require_reference(const Signal* x_true, const char* loss) {
  if (x_true == nullptr) throw ConfigError(std::string(loss) + " loss requires a reference image x_true");
  return *x_true;
}

// F(v) = 1/2 max(v - hi, 0)^2 + 1/2 min(v - lo, 0)^2 and its derivative
double corridor(double v, double lo, double hi) {
  const double a = std::max(v - hi, 0.0), b = std::min(v - lo, 0.0);
  return 0.5 * (a * a + b * b);
}
double corridor_deriv(double v, double lo, double hi) { return std::max(v - hi, 0.0) + std::min(v - lo, 0.0); }
}  // namespace

std::string loss_name(const LossSpec& spec) {
  return std::visit(overloaded{[](const MseLoss&) { return std::string("mse"); },
                               [](const HuberLoss&) { return std::string("huber"); },
                               [](const DiscrepancyLoss&) { return std::string("discrepancy"); },
                               [](const NoiseCorridorLoss&) { return std::string("noise_corridor"); },
                               [](const SureMcLoss&) { return std::string("sure_mc"); }},
                    spec);
}

bool loss_is_supervised(const LossSpec& spec) {
  return std::holds_alternative<MseLoss>(spec) || std::holds_alternative<HuberLoss>(spec);
}

bool loss_has_gradient(const LossSpec& spec) { return !std::holds_alternative<SureMcLoss>(spec); }

LossEval loss_value_grad(const LossSpec& spec, const Signal& xhat, const Signal& y, const ForwardModel& A,
                         const Signal* x_true, const Denoiser* denoiser) {
  const double N = static_cast<double>(xhat.size());
  return std::visit(
      overloaded{
          [&](const MseLoss&) {
            Signal r = xhat - require_reference(x_true, "mse");
            const double v = 0.5 * dot(r, r);
            return LossEval{v, std::move(r)};
          },
          [&](const HuberLoss& h) {
            const Signal r = xhat - require_reference(x_true, "huber");
            const Potential pot = Potential::corner_rounded(h.eps);
            Signal g(r.grid());
            double v = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) {
              const PhiValues pv = phi_derivatives(pot, r[i]);
              v += pv.phi;
              g[i] = pv.dphi;
            }
            return LossEval{v, std::move(g)};
          },
          [&](const DiscrepancyLoss& d) {
            const Signal r = A.apply(xhat) - y;
            const double gap = dot(r, r) / N - d.sigma * d.sigma;
            Signal g = A.adjoint(r);
            g *= 4.0 * gap / N;
            return LossEval{gap * gap, std::move(g)};
          },
          [&](const NoiseCorridorLoss& c) {
            const Signal r = A.apply(xhat) - y;
            if (c.weights && !(c.weights->grid() == r.grid()))
              throw DimensionError("noise corridor weights do not match the grid");
            Signal s(r.grid());
            double v = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) {
              const double w = c.weights ? (*c.weights)[i] : 1.0;
              const double n2 = w * r[i] * r[i];
              v += corridor(n2, c.var_lo, c.var_hi);
              s[i] = corridor_deriv(n2, c.var_lo, c.var_hi) * 2.0 * w * r[i];
            }
            return LossEval{v, A.adjoint(s)};
          },
          [&](const SureMcLoss& s) {
            if (denoiser == nullptr) throw ConfigError("sure_mc loss requires a denoiser");
            const double eps = s.probe_eps.value_or(0.0);
            return LossEval{sure_mc(*denoiser, y, s.sigma, eps, s.n_probes, s.seed), std::nullopt};
          }},
      spec);
}

UpperLoss::UpperLoss(LossSpec spec, ForwardModel A, Signal y, std::optional<Signal> x_true)
    : spec_(std::move(spec)), A_(std::move(A)), y_(std::move(y)), x_true_(std::move(x_true)) {
  if (loss_is_supervised(spec_) && !x_true_) throw ConfigError(loss_name(spec_) + " loss requires x_true");
}

LossEval UpperLoss::evaluate(const Signal& x, const Denoiser* denoiser) const {
  return loss_value_grad(spec_, x, y_, A_, x_true_ ? &*x_true_ : nullptr, denoiser);
}

double UpperLoss::value(const Signal& x) const { return evaluate(x).value; }

Signal UpperLoss::grad_x(const Signal& x) const {
  if (!loss_has_gradient(spec_)) throw ConfigError(loss_name(spec_) + " loss has no x-gradient");
  return *evaluate(x).grad_x;
}

double mc_divergence(const Denoiser& denoiser, const Signal& y, double probe_eps, int n_probes, std::uint64_t seed) {
  if (n_probes < 1) throw ConfigError("n_probes must be >= 1");
  if (!(probe_eps > 0.0)) throw ConfigError("probe_eps must be positive");
  Rng rng(seed);
  const Signal base = denoiser(y);
  double acc = 0.0;
  Signal b(y.grid());
  for (int p = 0; p < n_probes; ++p) {
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.rademacher();
    Signal yp = y;
    axpy(probe_eps, b, yp);
    acc += dot(b, denoiser(yp) - base) / probe_eps;
  }
  return acc / n_probes;
}

double sure_mc(const Denoiser& denoiser, const Signal& y, double sigma, double probe_eps, int n_probes,
               std::uint64_t seed) {
  const double N = static_cast<double>(y.size());
  if (!(probe_eps > 0.0)) {
    probe_eps = 1e-3 * norm(y) / std::sqrt(N);
    if (!(probe_eps > 0.0)) probe_eps = 1e-3;
  }
  const Signal r = y - denoiser(y);
  const double div = mc_divergence(denoiser, y, probe_eps, n_probes, seed);
  return dot(r, r) / N - sigma * sigma + 2.0 * sigma * sigma / N * div;
}

Metrics metrics(const Signal& xhat, const Signal& x_true) {
  const Signal r = xhat - x_true;
  const double N = static_cast<double>(r.size());
  const double err2 = dot(r, r);
  double l1 = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    l1 += std::abs(r[i]);
    peak = std::max(peak, std::abs(x_true[i]));
  }
  const double inf = std::numeric_limits<double>::infinity();
  Metrics m{err2 / N, l1 / N, inf, inf};
  if (err2 > 0.0) {
    m.snr_db = 10.0 * std::log10(dot(x_true, x_true) / err2);
    m.psnr_db = 10.0 * std::log10(N * peak * peak / err2);
  }
  return m;
}

}  // namespace bilevel
