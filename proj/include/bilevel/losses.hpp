#pragma once

// Upper-level losses and reconstruction quality metrics.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>

#include "bilevel/forward_model.hpp"
#include "bilevel/signal.hpp"

namespace bilevel {

struct MseLoss {};
struct HuberLoss {
  double eps = 0.01;
};
struct DiscrepancyLoss {
  double sigma = 0.1;
};
struct NoiseCorridorLoss {
  double var_lo = 0.0;
  double var_hi = 0.0;
  std::optional<Signal> weights;  // all-ones when empty
};
struct SureMcLoss {
  double sigma = 0.1;
  std::optional<double> probe_eps;  // default 1e-3 ||y|| / sqrt(N)
  int n_probes = 1;
  std::uint64_t seed = 0;
};

using LossSpec = std::variant<MseLoss, HuberLoss, DiscrepancyLoss, NoiseCorridorLoss, SureMcLoss>;

std::string loss_name(const LossSpec& spec);
bool loss_is_supervised(const LossSpec& spec);
bool loss_has_gradient(const LossSpec& spec);

using Denoiser = std::function<Signal(const Signal&)>;

struct LossEval {
  double value = 0.0;
  std::optional<Signal> grad_x;  // empty for losses without an x-gradient (SURE)
};

// Value and x-gradient of the loss at xhat. x_true is required by supervised
// losses; `denoiser` (y -> xhat) is required by the Monte-Carlo SURE loss.
LossEval loss_value_grad(const LossSpec& spec, const Signal& xhat, const Signal& y, const ForwardModel& A,
                         const Signal* x_true, const Denoiser* denoiser = nullptr);

// Loss bound to one training sample.
class UpperLoss {
 public:
  UpperLoss(LossSpec spec, ForwardModel A, Signal y, std::optional<Signal> x_true);

  const LossSpec& spec() const { return spec_; }
  double value(const Signal& x) const;
  Signal grad_x(const Signal& x) const;
  LossEval evaluate(const Signal& x, const Denoiser* denoiser = nullptr) const;

 private:
  LossSpec spec_;
  ForwardModel A_;
  Signal y_;
  std::optional<Signal> x_true_;
};

// Monte-Carlo divergence of y -> denoiser(y) at y with Rademacher probes.
double mc_divergence(const Denoiser& denoiser, const Signal& y, double probe_eps, int n_probes, std::uint64_t seed);

// (1/N)||y - xhat(y)||^2 - sigma^2 + (2 sigma^2 / N) div, with the divergence
// estimated by mc_divergence. probe_eps <= 0 selects the default 1e-3 ||y|| / sqrt(N).
double sure_mc(const Denoiser& denoiser, const Signal& y, double sigma, double probe_eps, int n_probes,
               std::uint64_t seed);

struct Metrics {
  double mse;      // (1/N)||xhat - x_true||^2
  double mae;      // (1/N)||xhat - x_true||_1
  double snr_db;   // +inf when xhat == x_true
  double psnr_db;  // peak = max|x_true|; +inf when xhat == x_true
};

Metrics metrics(const Signal& xhat, const Signal& x_true);

}  // namespace bilevel
