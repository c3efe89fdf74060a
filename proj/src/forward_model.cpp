#include "bilevel/forward_model.hpp"

#include <algorithm>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

ForwardModel ForwardModel::identity(Grid grid) { return ForwardModel(std::move(grid), Identity{}); }

ForwardModel ForwardModel::mask(Signal mask) {
  bool any_one = false;
  for (double v : mask.values()) {
    if (v != 0.0 && v != 1.0) throw ConfigError("mask values must be 0 or 1");
    any_one = any_one || v == 1.0;
  }
  if (!any_one) throw ConfigError("mask must keep at least one sample");
  Grid g = mask.grid();
  return ForwardModel(std::move(g), Mask{std::move(mask)});
}

ForwardModel ForwardModel::circulant(Filter kernel, Grid grid) {
  check_fits(kernel, grid);
  return ForwardModel(std::move(grid), Circulant{std::move(kernel)});
}

void ForwardModel::check_grid(const Signal& s) const {
  if (!(s.grid() == grid_)) throw DimensionError("signal grid does not match forward model grid");
}

Signal ForwardModel::apply(const Signal& x) const {
  check_grid(x);
  return std::visit(overloaded{[&](const Identity&) { return x; },
                               [&](const Mask& m) { return hadamard(m.mask, x); },
                               [&](const Circulant& c) { return circ_conv(x, c.kernel); }},
                    op_);
}

Signal ForwardModel::adjoint(const Signal& u) const {
  check_grid(u);
  return std::visit(overloaded{[&](const Identity&) { return u; },
                               [&](const Mask& m) { return hadamard(m.mask, u); },
                               [&](const Circulant& c) { return circ_conv_adjoint(u, c.kernel); }},
                    op_);
}

SpectralBounds ForwardModel::spectral_bounds() const {
  return std::visit(overloaded{[](const Identity&) { return SpectralBounds{1.0, 1.0}; },
                               [](const Mask& m) {
                                 const auto v = m.mask.values();
                                 const bool any_zero = std::find(v.begin(), v.end(), 0.0) != v.end();
                                 return SpectralBounds{1.0, any_zero ? 0.0 : 1.0};
                               },
                               [&](const Circulant& c) {
                                 const auto mags = filter_spectrum(c.kernel, grid_);
                                 const auto [lo, hi] = std::minmax_element(mags.begin(), mags.end());
                                 return SpectralBounds{(*hi) * (*hi), (*lo) * (*lo)};
                               }},
                    op_);
}

}  // namespace bilevel
