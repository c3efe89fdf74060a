#pragma once

// Lower-level reconstruction cost
//
//   Phi(x; theta, y) = 1/2 ||A x - y||^2 + e^{beta0} sum_k e^{beta_k} 1' phi.(c_k * x)
//
// together with its x-gradient, Hessian-vector products, and the actions of the
// mixed Jacobian d/dtheta grad_x Phi in both directions.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bilevel/forward_model.hpp"
#include "bilevel/potential.hpp"
#include "bilevel/signal.hpp"

namespace bilevel {

// Which hyperparameter groups appear in the flat theta vector.
struct LearnMask {
  bool beta0 = false;
  bool betas = true;
  bool filters = true;
  bool operator==(const LearnMask&) const = default;
};

struct HyperParams {
  double beta0 = 0.0;
  std::vector<double> betas;
  std::vector<Filter> filters;
  Potential potential;
  LearnMask learn;

  std::size_t filter_count() const { return filters.size(); }
  // e^{beta0 + beta_k}
  double weight(std::size_t k) const;
  // Throws DimensionError / ConfigError when inconsistent with the grid.
  void validate(const Grid& grid) const;

  bool operator==(const HyperParams&) const = default;
};

using ThetaVector = std::vector<double>;

// Flat layout "theta-v1": [beta0 (if learned), beta_1..beta_K (if learned),
// taps of c_1, ..., taps of c_K (if learned)], taps row-major per filter.
class ThetaLayout {
 public:
  static constexpr const char* kTag = "theta-v1";

  explicit ThetaLayout(const HyperParams& hp);

  std::size_t size() const { return size_; }
  std::optional<std::size_t> beta0_index() const;
  std::optional<std::size_t> beta_index(std::size_t k) const;
  std::optional<std::size_t> tap_offset(std::size_t k) const;

  ThetaVector pack(const HyperParams& hp) const;
  // Copies `base` and overwrites the learned entries from `theta`.
  HyperParams unpack(const HyperParams& base, std::span<const double> theta) const;

  // Human-readable name of coordinate j, e.g. "beta1" or "c2[0,1]".
  std::string coordinate_name(std::size_t j) const;

 private:
  LearnMask learn_;
  std::size_t filter_count_;
  std::vector<std::vector<int>> extents_;
  std::vector<std::size_t> tap_offsets_;
  std::size_t size_;
};

struct RegularityReport {
  std::map<std::string, double> constants;
  bool strongly_convex = false;
  std::vector<std::string> flags;
};

// Hessian of Phi at a fixed x with the curvature terms phi''(c_k * x) cached.
class HessianAt {
 public:
  Signal apply(const Signal& v) const;
  Signal operator()(const Signal& v) const { return apply(v); }

 private:
  friend class LowerProblem;
  HessianAt(const class LowerProblem& p, const Signal& x);
  const LowerProblem* problem_;
  std::vector<Signal> curvature_;  // e^{beta0+beta_k} phi''(c_k * x)
};

class LowerProblem {
 public:
  LowerProblem(ForwardModel A, Signal y, HyperParams theta);

  const ForwardModel& forward_model() const { return A_; }
  const Signal& data() const { return y_; }
  const HyperParams& params() const { return theta_; }
  const ThetaLayout& layout() const { return layout_; }
  const Grid& grid() const { return A_.grid(); }

  // Same forward model and data with different hyperparameters.
  LowerProblem with_params(HyperParams theta) const;

  double cost(const Signal& x) const;
  Signal grad_x(const Signal& x) const;
  Signal hess_vec(const Signal& x, const Signal& v) const;
  // The result refers to this problem, which must outlive it.
  HessianAt hessian_at(const Signal& x) const& { return HessianAt(*this, x); }
  HessianAt hessian_at(const Signal& x) const&& = delete;

  // (grad_{x theta} Phi)' u, a theta-shaped vector.
  ThetaVector jac_adjoint_apply(const Signal& x, const Signal& u) const;
  // (grad_{x theta} Phi) dtheta, an image-shaped vector.
  Signal jac_apply(const Signal& x, std::span<const double> dtheta) const;

  // sigma_1^2(A) + e^{beta0} L_dphi sum_k e^{beta_k} sigma_1^2(C_k)
  double lipschitz_grad() const;
  RegularityReport regularity_report(double x_norm_bound) const;

 private:
  friend class HessianAt;

  ForwardModel A_;
  Signal y_;
  HyperParams theta_;
  ThetaLayout layout_;
};

}  // namespace bilevel
