#include "bilevel/lower_level.hpp"

#include <cmath>
#include <limits>

#include "bilevel/errors.hpp"

namespace bilevel {

double HyperParams::weight(std::size_t k) const { return std::exp(beta0 + betas.at(k)); }

void HyperParams::validate(const Grid& grid) const {
  if (betas.size() != filters.size())
    throw ConfigError("hyperparameters have " + std::to_string(betas.size()) + " tuning parameters for " +
                      std::to_string(filters.size()) + " filters");
  if (!std::isfinite(beta0)) throw ConfigError("beta0 must be finite");
  for (double b : betas)
    if (!std::isfinite(b)) throw ConfigError("tuning parameters must be finite");
  for (const Filter& f : filters) {
    check_fits(f, grid);
    for (double t : f.taps())
      if (!std::isfinite(t)) throw ConfigError("filter taps must be finite");
  }
  if (potential.kind == Potential::Kind::CornerRounded1Norm && !(potential.eps > 0.0))
    throw ConfigError("corner rounding eps must be positive");
}

ThetaLayout::ThetaLayout(const HyperParams& hp) : learn_(hp.learn), filter_count_(hp.filters.size()), size_(0) {
  if (learn_.beta0) ++size_;
  if (learn_.betas) size_ += filter_count_;
  for (const Filter& f : hp.filters) {
    extents_.push_back(f.extents());
    tap_offsets_.push_back(size_);
    if (learn_.filters) size_ += f.tap_count();
  }
}

std::optional<std::size_t> ThetaLayout::beta0_index() const {
  if (!learn_.beta0) return std::nullopt;
  return 0;
}

std::optional<std::size_t> ThetaLayout::beta_index(std::size_t k) const {
  if (!learn_.betas) return std::nullopt;
  return (learn_.beta0 ? 1 : 0) + k;
}

std::optional<std::size_t> ThetaLayout::tap_offset(std::size_t k) const {
  if (!learn_.filters) return std::nullopt;
  return tap_offsets_.at(k);
}

ThetaVector ThetaLayout::pack(const HyperParams& hp) const {
  if (!(ThetaLayout(hp).extents_ == extents_) || !(hp.learn == learn_))
    throw DimensionError("hyperparameters do not match the theta layout");
  ThetaVector v(size_);
  if (auto i = beta0_index()) v[*i] = hp.beta0;
  for (std::size_t k = 0; k < filter_count_; ++k) {
    if (auto i = beta_index(k)) v[*i] = hp.betas[k];
    if (auto o = tap_offset(k))
      for (std::size_t j = 0; j < hp.filters[k].tap_count(); ++j) v[*o + j] = hp.filters[k][j];
  }
  return v;
}

HyperParams ThetaLayout::unpack(const HyperParams& base, std::span<const double> theta) const {
  if (theta.size() != size_)
    throw DimensionError("theta has " + std::to_string(theta.size()) + " entries, layout expects " +
                         std::to_string(size_));
  HyperParams hp = base;
  if (auto i = beta0_index()) hp.beta0 = theta[*i];
  for (std::size_t k = 0; k < filter_count_; ++k) {
    if (auto i = beta_index(k)) hp.betas[k] = theta[*i];
    if (auto o = tap_offset(k))
      for (std::size_t j = 0; j < hp.filters[k].tap_count(); ++j) hp.filters[k][j] = theta[*o + j];
  }
  return hp;
}

std::string ThetaLayout::coordinate_name(std::size_t j) const {
  if (auto i = beta0_index(); i && *i == j) return "beta0";
  for (std::size_t k = 0; k < filter_count_; ++k) {
    if (auto i = beta_index(k); i && *i == j) return "beta" + std::to_string(k + 1);
  }
  for (std::size_t k = 0; k < filter_count_; ++k) {
    auto o = tap_offset(k);
    if (!o) continue;
    const auto& ext = extents_[k];
    std::size_t n = 1;
    for (int e : ext) n *= static_cast<std::size_t>(e);
    if (j >= *o && j < *o + n) {
      const std::size_t t = j - *o;
      std::string idx = ext.size() == 1
                            ? std::to_string(t)
                            : std::to_string(t / static_cast<std::size_t>(ext[1])) + "," +
                                  std::to_string(t % static_cast<std::size_t>(ext[1]));
      return "c" + std::to_string(k + 1) + "[" + idx + "]";
    }
  }
  throw DimensionError("theta coordinate " + std::to_string(j) + " out of range");
}

LowerProblem::LowerProblem(ForwardModel A, Signal y, HyperParams theta)
    : A_(std::move(A)), y_(std::move(y)), theta_(std::move(theta)), layout_(theta_) {
  if (!(y_.grid() == A_.grid())) throw DimensionError("data grid does not match forward model grid");
  theta_.validate(A_.grid());
}

LowerProblem LowerProblem::with_params(HyperParams theta) const { return LowerProblem(A_, y_, std::move(theta)); }

double LowerProblem::cost(const Signal& x) const {
  const Signal r = A_.apply(x) - y_;
  double value = 0.5 * dot(r, r);
  for (std::size_t k = 0; k < theta_.filter_count(); ++k) {
    const Signal z = circ_conv(x, theta_.filters[k]);
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += phi_derivatives(theta_.potential, z[i]).phi;
    value += theta_.weight(k) * s;
  }
  return value;
}

Signal LowerProblem::grad_x(const Signal& x) const {
  Signal g = A_.adjoint(A_.apply(x) - y_);
  for (std::size_t k = 0; k < theta_.filter_count(); ++k) {
    const Filter& c = theta_.filters[k];
    axpy(theta_.weight(k), circ_conv_adjoint(dphi_apply(theta_.potential, circ_conv(x, c)), c), g);
  }
  return g;
}

HessianAt::HessianAt(const LowerProblem& p, const Signal& x) : problem_(&p) {
  const HyperParams& hp = p.theta_;
  curvature_.reserve(hp.filter_count());
  for (std::size_t k = 0; k < hp.filter_count(); ++k) {
    Signal w = ddphi_apply(hp.potential, circ_conv(x, hp.filters[k]));
    w *= hp.weight(k);
    curvature_.push_back(std::move(w));
  }
}

Signal HessianAt::apply(const Signal& v) const {
  const HyperParams& hp = problem_->theta_;
  Signal out = problem_->A_.gram(v);
  for (std::size_t k = 0; k < hp.filter_count(); ++k) {
    const Filter& c = hp.filters[k];
    out += circ_conv_adjoint(hadamard(curvature_[k], circ_conv(v, c)), c);
  }
  return out;
}

Signal LowerProblem::hess_vec(const Signal& x, const Signal& v) const { return hessian_at(x).apply(v); }

ThetaVector LowerProblem::jac_adjoint_apply(const Signal& x, const Signal& u) const {
  ThetaVector out(layout_.size(), 0.0);
  for (std::size_t k = 0; k < theta_.filter_count(); ++k) {
    const Filter& c = theta_.filters[k];
    const double w = theta_.weight(k);
    const Signal z = circ_conv(x, c);
    const Signal d = dphi_apply(theta_.potential, z);
    const Signal cu = circ_conv(u, c);
    const double beta_entry = w * dot(d, cu);
    if (auto i = layout_.beta_index(k)) out[*i] = beta_entry;
    if (auto i = layout_.beta0_index()) out[*i] += beta_entry;
    if (auto o = layout_.tap_offset(k)) {
      // d/dc_s of C'phi'(Cx) is shift_{+s}(phi'(z)) + C'(phi''(z) . shift_{-s}(x)).
      const Filter t1 = correlate_taps(d, u, c.extents());
      const Filter t2 = correlate_taps(hadamard(ddphi_apply(theta_.potential, z), cu), x, c.extents());
      for (std::size_t j = 0; j < c.tap_count(); ++j) out[*o + j] = w * (t1[j] + t2[j]);
    }
  }
  return out;
}

Signal LowerProblem::jac_apply(const Signal& x, std::span<const double> dtheta) const {
  if (dtheta.size() != layout_.size())
    throw DimensionError("dtheta has " + std::to_string(dtheta.size()) + " entries, layout expects " +
                         std::to_string(layout_.size()));
  Signal out(grid());
  const double dbeta0 = layout_.beta0_index() ? dtheta[*layout_.beta0_index()] : 0.0;
  for (std::size_t k = 0; k < theta_.filter_count(); ++k) {
    const Filter& c = theta_.filters[k];
    const double w = theta_.weight(k);
    const Signal z = circ_conv(x, c);
    const Signal d = dphi_apply(theta_.potential, z);
    double a = dbeta0;
    if (auto i = layout_.beta_index(k)) a += dtheta[*i];
    if (a != 0.0) axpy(a * w, circ_conv_adjoint(d, c), out);
    if (auto o = layout_.tap_offset(k)) {
      std::vector<double> taps(dtheta.begin() + static_cast<std::ptrdiff_t>(*o),
                               dtheta.begin() + static_cast<std::ptrdiff_t>(*o + c.tap_count()));
      const Filter dc(c.extents(), std::move(taps));
      Signal term = circ_conv_adjoint(d, dc);
      term += circ_conv_adjoint(hadamard(ddphi_apply(theta_.potential, z), circ_conv(x, dc)), c);
      axpy(w, term, out);
    }
  }
  return out;
}

double LowerProblem::lipschitz_grad() const {
  double L = A_.spectral_bounds().sigma1_sq;
  if (theta_.filter_count() == 0) return L;
  const double Ld = sup_ddphi(theta_.potential);
  for (std::size_t k = 0; k < theta_.filter_count(); ++k) {
    const double s1 = filter_spectrum_max(theta_.filters[k], grid());
    L += theta_.weight(k) * Ld * s1 * s1;
  }
  return L;
}

RegularityReport LowerProblem::regularity_report(double x_norm_bound) const {
  RegularityReport rep;
  const SpectralBounds sb = A_.spectral_bounds();
  rep.constants["mu_x_Phi"] = sb.sigmaN_sq;
  rep.strongly_convex = sb.sigmaN_sq > 0.0;
  if (!rep.strongly_convex) rep.flags.emplace_back("not strongly convex: sigma_N(A) = 0");
  rep.constants["L_x_grad_x_Phi"] = lipschitz_grad();

  const Potential& pot = theta_.potential;
  const double L_dphi = sup_ddphi(pot);
  const double L_ddphi = sup_abs_dddphi(pot);
  double L_phi = std::numeric_limits<double>::infinity();
  try {
    L_phi = sup_abs_dphi(pot);
  } catch (const UnboundedConstantError&) {
    rep.flags.emplace_back("sup|phi'| unbounded: mixed-gradient bounds are infinite");
  }
  rep.constants["L_phi"] = L_phi;
  rep.constants["L_dphi"] = L_dphi;
  rep.constants["L_ddphi"] = L_ddphi;
  rep.constants["x_norm_bound"] = x_norm_bound;

  double L_hess = 0.0;
  const double xn = x_norm_bound;
  for (std::size_t k = 0; k < theta_.filter_count(); ++k) {
    const double w = theta_.weight(k);
    const double s1 = filter_spectrum_max(theta_.filters[k], grid());
    const std::string id = std::to_string(k + 1);
    L_hess += w * L_dphi * s1 * s1;
    rep.constants["sigma1_C" + id] = s1;
    // x-Lipschitz constants of the mixed gradients
    rep.constants["L_x_grad_beta" + id] = w * L_dphi * s1 * s1;
    rep.constants["L_x_grad_c" + id] = w * s1 * (2.0 * L_dphi + s1 * L_ddphi * xn);
    // bounds on the mixed gradients themselves
    rep.constants["C_grad_beta" + id] = w * s1 * L_phi;
    rep.constants["C_grad_c" + id] = w * (L_phi + L_dphi * s1 * xn);
    // theta-Lipschitz constants
    rep.constants["L_beta_grad_beta" + id] = w * s1 * L_phi;
    rep.constants["L_beta_hess" + id] = w * s1 * s1 * L_dphi;
    rep.constants["L_c_grad_c" + id] = w * (L_phi + xn * (L_dphi + L_ddphi * s1 * xn));
    rep.constants["L_c_hess" + id] = w * (2.0 * L_dphi * s1 + L_ddphi * s1 * s1 * xn);
  }
  rep.constants["L_x_hess_Phi"] = L_hess;
  return rep;
}

}  // namespace bilevel
