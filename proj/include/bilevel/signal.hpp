#pragma once

// Grids, signals and small convolution filters on circular (periodic) grids.
//
// Storage is grid-major (row-major for 2-D): element (i0, i1) lives at
// i0 * extent(1) + i1. Convolution is true circular convolution,
//
//     (c * x)_i = sum_s c_s x_{i - s},
//
// so that the adjoint is correlation with the same taps, (C'u)_j = sum_s c_s u_{j + s}.

#include <cstddef>
#include <span>
#include <vector>

namespace bilevel {

class Grid {
 public:
  explicit Grid(std::vector<int> extents);
  static Grid line(int n) { return Grid({n}); }
  static Grid plane(int rows, int cols) { return Grid({rows, cols}); }

  int rank() const { return static_cast<int>(extents_.size()); }
  int extent(int d) const { return extents_.at(static_cast<std::size_t>(d)); }
  const std::vector<int>& extents() const { return extents_; }
  std::size_t size() const { return size_; }

  // Extents viewed as (rows, cols); a 1-D grid is a single row.
  int rows() const { return rank() == 1 ? 1 : extents_[0]; }
  int cols() const { return extents_.back(); }

  bool operator==(const Grid& other) const { return extents_ == other.extents_; }

 private:
  std::vector<int> extents_;
  std::size_t size_;
};

class Signal {
 public:
  explicit Signal(Grid grid);
  Signal(Grid grid, std::vector<double> values);

  const Grid& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& vector() const { return values_; }

  Signal& operator+=(const Signal& other);
  Signal& operator-=(const Signal& other);
  Signal& operator*=(double alpha);

  bool all_finite() const;

 private:
  Grid grid_;
  std::vector<double> values_;
};

Signal operator+(Signal a, const Signal& b);
Signal operator-(Signal a, const Signal& b);
Signal operator*(double alpha, Signal a);

double dot(const Signal& a, const Signal& b);
double norm(const Signal& a);
// y += alpha * x
void axpy(double alpha, const Signal& x, Signal& y);
// Elementwise product.
Signal hadamard(const Signal& a, const Signal& b);

// Filter taps c_s for 0 <= s_d < extents[d], stored row-major.
class Filter {
 public:
  Filter(std::vector<int> extents, std::vector<double> taps);
  static Filter delta(int rank = 1);
  static Filter line(std::vector<double> taps);

  int rank() const { return static_cast<int>(extents_.size()); }
  const std::vector<int>& extents() const { return extents_; }
  std::size_t tap_count() const { return taps_.size(); }
  int rows() const { return rank() == 1 ? 1 : extents_[0]; }
  int cols() const { return extents_.back(); }

  double& operator[](std::size_t j) { return taps_[j]; }
  double operator[](std::size_t j) const { return taps_[j]; }
  std::span<const double> taps() const { return taps_; }
  std::span<double> taps() { return taps_; }

  double l1_norm() const;
  double l2_norm() const;

  bool operator==(const Filter& other) const = default;

 private:
  std::vector<int> extents_;
  std::vector<double> taps_;
};

// Throws DimensionError when the filter rank differs from the grid or a tap extent exceeds it.
void check_fits(const Filter& c, const Grid& grid);

Signal circ_conv(const Signal& x, const Filter& c);
Signal circ_conv_adjoint(const Signal& u, const Filter& c);

// result_i = x_{i + offset}, circular in every dimension.
Signal circshift(const Signal& x, std::span<const int> offset);

// Filter-shaped correlation: result_s = sum_i a_{i + s} b_i.
// <c * x, u> = sum_s c_s correlate_taps(u, x, extents)_s, i.e. this is the
// adjoint of convolution with respect to the taps.
Filter correlate_taps(const Signal& a, const Signal& b, const std::vector<int>& extents);

// |DFT| of the zero-padded filter at every grid frequency, in grid-major order.
// These are the singular values of the circulant matrix C.
std::vector<double> filter_spectrum(const Filter& c, const Grid& grid);
double filter_spectrum_max(const Filter& c, const Grid& grid);
double filter_spectrum_min(const Filter& c, const Grid& grid);

}  // namespace bilevel
