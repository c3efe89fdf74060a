#include "bilevel/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <string>

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

inline int wrap(int i, int n) {
  const int r = i % n;
  return r < 0 ? r + n : r;
}

void check_same_grid(const Signal& a, const Signal& b) {
  if (!(a.grid() == b.grid())) throw DimensionError("signals live on different grids");
}

}  // namespace

Grid::Grid(std::vector<int> extents) : extents_(std::move(extents)), size_(1) {
  if (extents_.empty() || extents_.size() > 2)
    throw DimensionError("grid rank must be 1 or 2, got " + std::to_string(extents_.size()));
  for (int e : extents_) {
    if (e < 1) throw DimensionError("grid extent must be >= 1, got " + std::to_string(e));
    size_ *= static_cast<std::size_t>(e);
  }
}

Signal::Signal(Grid grid) : grid_(std::move(grid)), values_(grid_.size(), 0.0) {}

Signal::Signal(Grid grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  if (values_.size() != grid_.size())
    throw DimensionError("signal has " + std::to_string(values_.size()) + " values for a grid of " +
                         std::to_string(grid_.size()));
}

Signal& Signal::operator+=(const Signal& other) {
  check_same_grid(*this, other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Signal& Signal::operator-=(const Signal& other) {
  check_same_grid(*this, other);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

Signal& Signal::operator*=(double alpha) {
  for (double& v : values_) v *= alpha;
  return *this;
}

bool Signal::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Signal operator+(Signal a, const Signal& b) { return a += b; }
Signal operator-(Signal a, const Signal& b) { return a -= b; }
Signal operator*(double alpha, Signal a) { return a *= alpha; }

double dot(const Signal& a, const Signal& b) {
  check_same_grid(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Signal& a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, const Signal& x, Signal& y) {
  check_same_grid(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Signal hadamard(const Signal& a, const Signal& b) {
  check_same_grid(a, b);
  Signal out(a.grid());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Filter::Filter(std::vector<int> extents, std::vector<double> taps)
    : extents_(std::move(extents)), taps_(std::move(taps)) {
  if (extents_.empty() || extents_.size() > 2) throw DimensionError("filter rank must be 1 or 2");
  std::size_t n = 1;
  for (int e : extents_) {
    if (e < 1) throw DimensionError("filter extent must be >= 1");
    n *= static_cast<std::size_t>(e);
  }
  if (n != taps_.size())
    throw DimensionError("filter has " + std::to_string(taps_.size()) + " taps for extents of size " +
                         std::to_string(n));
}

Filter Filter::delta(int rank) { return Filter(std::vector<int>(static_cast<std::size_t>(rank), 1), {1.0}); }

Filter Filter::line(std::vector<double> taps) {
  const int n = static_cast<int>(taps.size());
  return Filter({n}, std::move(taps));
}

double Filter::l1_norm() const {
  double s = 0.0;
  for (double t : taps_) s += std::abs(t);
  return s;
}

double Filter::l2_norm() const {
  double s = 0.0;
  for (double t : taps_) s += t * t;
  return std::sqrt(s);
}

void check_fits(const Filter& c, const Grid& grid) {
  if (c.rank() != grid.rank())
    throw DimensionError("filter rank " + std::to_string(c.rank()) + " does not match grid rank " +
                         std::to_string(grid.rank()));
  for (int d = 0; d < c.rank(); ++d) {
    if (c.extents()[static_cast<std::size_t>(d)] > grid.extent(d))
      throw DimensionError("filter extent " + std::to_string(c.extents()[static_cast<std::size_t>(d)]) +
                           " exceeds grid extent " + std::to_string(grid.extent(d)) + " in dimension " +
                           std::to_string(d));
  }
}

Signal circ_conv(const Signal& x, const Filter& c) {
  const Grid& g = x.grid();
  check_fits(c, g);
  const int n0 = g.rows(), n1 = g.cols();
  const int r0 = c.rows(), r1 = c.cols();
  Signal out(g);
  for (int s0 = 0; s0 < r0; ++s0) {
    for (int s1 = 0; s1 < r1; ++s1) {
      const double cs = c[static_cast<std::size_t>(s0 * r1 + s1)];
      if (cs == 0.0) continue;
      for (int i0 = 0; i0 < n0; ++i0) {
        const int src_row = wrap(i0 - s0, n0) * n1;
        const int dst_row = i0 * n1;
        for (int i1 = 0; i1 < n1; ++i1) {
          int j1 = i1 - s1;
          if (j1 < 0) j1 += n1;
          out[static_cast<std::size_t>(dst_row + i1)] += cs * x[static_cast<std::size_t>(src_row + j1)];
        }
      }
    }
  }
  return out;
}

Signal circ_conv_adjoint(const Signal& u, const Filter& c) {
  const Grid& g = u.grid();
  check_fits(c, g);
  const int n0 = g.rows(), n1 = g.cols();
  const int r0 = c.rows(), r1 = c.cols();
  Signal out(g);
  for (int s0 = 0; s0 < r0; ++s0) {
    for (int s1 = 0; s1 < r1; ++s1) {
      const double cs = c[static_cast<std::size_t>(s0 * r1 + s1)];
      if (cs == 0.0) continue;
      for (int j0 = 0; j0 < n0; ++j0) {
        const int src_row = wrap(j0 + s0, n0) * n1;
        const int dst_row = j0 * n1;
        for (int j1 = 0; j1 < n1; ++j1) {
          int i1 = j1 + s1;
          if (i1 >= n1) i1 -= n1;
          out[static_cast<std::size_t>(dst_row + j1)] += cs * u[static_cast<std::size_t>(src_row + i1)];
        }
      }
    }
  }
  return out;
}

Signal circshift(const Signal& x, std::span<const int> offset) {
  const Grid& g = x.grid();
  if (static_cast<int>(offset.size()) != g.rank())
    throw DimensionError("shift rank " + std::to_string(offset.size()) + " does not match grid rank " +
                         std::to_string(g.rank()));
  const int n0 = g.rows(), n1 = g.cols();
  const int o0 = g.rank() == 1 ? 0 : offset[0];
  const int o1 = offset.back();
  Signal out(g);
  for (int i0 = 0; i0 < n0; ++i0) {
    const int src_row = wrap(i0 + o0, n0) * n1;
    for (int i1 = 0; i1 < n1; ++i1)
      out[static_cast<std::size_t>(i0 * n1 + i1)] = x[static_cast<std::size_t>(src_row + wrap(i1 + o1, n1))];
  }
  return out;
}

Filter correlate_taps(const Signal& a, const Signal& b, const std::vector<int>& extents) {
  check_same_grid(a, b);
  std::vector<double> zeros(std::accumulate(extents.begin(), extents.end(), std::size_t{1},
                                            [](std::size_t p, int e) { return p * static_cast<std::size_t>(e); }),
                            0.0);
  Filter out(extents, std::move(zeros));
  const Grid& g = a.grid();
  check_fits(out, g);
  const int n0 = g.rows(), n1 = g.cols();
  const int r0 = out.rows(), r1 = out.cols();
  for (int s0 = 0; s0 < r0; ++s0) {
    for (int s1 = 0; s1 < r1; ++s1) {
      double acc = 0.0;
      for (int i0 = 0; i0 < n0; ++i0) {
        const int a_row = wrap(i0 + s0, n0) * n1;
        const int b_row = i0 * n1;
        for (int i1 = 0; i1 < n1; ++i1) {
          int j1 = i1 + s1;
          if (j1 >= n1) j1 -= n1;
          acc += a[static_cast<std::size_t>(a_row + j1)] * b[static_cast<std::size_t>(b_row + i1)];
        }
      }
      out[static_cast<std::size_t>(s0 * r1 + s1)] = acc;
    }
  }
  return out;
}

std::vector<double> filter_spectrum(const Filter& c, const Grid& grid) {
  check_fits(c, grid);
  const int n0 = grid.rows(), n1 = grid.cols();
  const int r0 = c.rows(), r1 = c.cols();
  std::vector<double> mags(grid.size());
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int m0 = 0; m0 < n0; ++m0) {
    for (int m1 = 0; m1 < n1; ++m1) {
      std::complex<double> acc{0.0, 0.0};
      for (int s0 = 0; s0 < r0; ++s0) {
        for (int s1 = 0; s1 < r1; ++s1) {
          const double cs = c[static_cast<std::size_t>(s0 * r1 + s1)];
          if (cs == 0.0) continue;
          // Reduce the phase index modulo the extent before scaling to keep it exact.
          const double phase = two_pi * (static_cast<double>((s0 * m0) % n0) / n0 +
                                         static_cast<double>((s1 * m1) % n1) / n1);
          acc += cs * std::polar(1.0, -phase);
        }
      }
      mags[static_cast<std::size_t>(m0 * n1 + m1)] = std::abs(acc);
    }
  }
  return mags;
}

double filter_spectrum_max(const Filter& c, const Grid& grid) {
  const auto mags = filter_spectrum(c, grid);
  return *std::max_element(mags.begin(), mags.end());
}

double filter_spectrum_min(const Filter& c, const Grid& grid) {
  const auto mags = filter_spectrum(c, grid);
  return *std::min_element(mags.begin(), mags.end());
}

}  // namespace bilevel
