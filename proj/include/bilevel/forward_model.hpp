#pragma once

#include <variant>

#include "bilevel/signal.hpp"

namespace bilevel {

struct SpectralBounds {
  double sigma1_sq;  // largest squared singular value
  double sigmaN_sq;  // smallest squared singular value
};

// Linear measurement operator A. Measurements share the image grid; masked-out
// samples are zeros.
class ForwardModel {
 public:
  struct Identity {};
  struct Mask {
    Signal mask;
  };
  struct Circulant {
    Filter kernel;
  };
  using Variant = std::variant<Identity, Mask, Circulant>;

  static ForwardModel identity(Grid grid);
  static ForwardModel mask(Signal mask);
  static ForwardModel circulant(Filter kernel, Grid grid);

  const Grid& grid() const { return grid_; }
  const Variant& variant() const { return op_; }

  Signal apply(const Signal& x) const;
  Signal adjoint(const Signal& u) const;
  // A'A v
  Signal gram(const Signal& v) const { return adjoint(apply(v)); }
  SpectralBounds spectral_bounds() const;

 private:
  ForwardModel(Grid grid, Variant op) : grid_(std::move(grid)), op_(std::move(op)) {}
  void check_grid(const Signal& s) const;

  Grid grid_;
  Variant op_;
};

inline Signal fwd_apply(const ForwardModel& A, const Signal& x) { return A.apply(x); }
inline Signal fwd_adjoint(const ForwardModel& A, const Signal& u) { return A.adjoint(u); }
inline SpectralBounds fwd_spectral_bounds(const ForwardModel& A) { return A.spectral_bounds(); }

}  // namespace bilevel
