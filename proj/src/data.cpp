#include "bilevel/data.hpp"

#include <algorithm>
#include <vector>

#include "bilevel/errors.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

namespace {

// k distinct positions from 1..n-1, sorted.
std::vector<int> pick_cuts(int n, int k, Rng& rng) {
  std::vector<int> pos(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n - 1; ++i) pos[static_cast<std::size_t>(i)] = i + 1;
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(pos.size() - static_cast<std::size_t>(i));
    std::swap(pos[static_cast<std::size_t>(i)], pos[j]);
  }
  pos.resize(static_cast<std::size_t>(k));
  std::sort(pos.begin(), pos.end());
  return pos;
}

double new_level(double prev, double lo, double hi, Rng& rng) {
  for (;;) {
    const double v = rng.uniform(lo, hi);
    if (v != prev) return v;
  }
}

}  // namespace

Signal gen_piecewise_constant(const Grid& grid, int n_jumps, double amp_lo, double amp_hi, std::uint64_t seed) {
  if (n_jumps < 0) throw ConfigError("n_jumps must be nonnegative");
  if (!(amp_lo <= amp_hi)) throw ConfigError("amplitude range is empty");
  if (n_jumps > 0 && !(amp_lo < amp_hi)) throw ConfigError("jumps need a non-degenerate amplitude range");
  Rng rng(seed);
  Signal x(grid);
  if (grid.rank() == 1) {
    const int n = grid.extent(0);
    if (n_jumps >= n) throw ConfigError("n_jumps must be smaller than the signal length");
    const std::vector<int> cuts = pick_cuts(n, n_jumps, rng);
    double level = rng.uniform(amp_lo, amp_hi);
    std::size_t next = 0;
    for (int i = 0; i < n; ++i) {
      if (next < cuts.size() && cuts[next] == i) {
        level = new_level(level, amp_lo, amp_hi, rng);
        ++next;
      }
      x[static_cast<std::size_t>(i)] = level;
    }
    return x;
  }
  const int rows = grid.rows(), cols = grid.cols();
  const int row_cuts = n_jumps / 2, col_cuts = n_jumps - row_cuts;
  if (row_cuts >= rows || col_cuts >= cols) throw ConfigError("too many jumps for the image size");
  const std::vector<int> rc = pick_cuts(rows, row_cuts, rng), cc = pick_cuts(cols, col_cuts, rng);
  std::vector<double> levels(static_cast<std::size_t>((row_cuts + 1) * (col_cuts + 1)));
  for (double& v : levels) v = rng.uniform(amp_lo, amp_hi);
  for (int r = 0; r < rows; ++r) {
    const auto br = std::upper_bound(rc.begin(), rc.end(), r) - rc.begin();
    for (int c = 0; c < cols; ++c) {
      const auto bc = std::upper_bound(cc.begin(), cc.end(), c) - cc.begin();
      x[static_cast<std::size_t>(r * cols + c)] = levels[static_cast<std::size_t>(br * (col_cuts + 1) + bc)];
    }
  }
  return x;
}

Signal add_noise(const Signal& x, const ForwardModel& A, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("noise level must be nonnegative");
  Signal y = A.apply(x);
  if (sigma == 0.0) return y;
  Rng rng(seed);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += sigma * rng.normal();
  return y;
}

TrainSet make_dataset(const DatasetSpec& spec, const ForwardModel& A) {
  if (spec.generator != "piecewise_constant") throw ConfigError("unknown generator '" + spec.generator + "'");
  if (spec.count < 1) throw ConfigError("dataset count must be positive");
  if (spec.realizations < 1) throw ConfigError("realizations must be positive");
  std::vector<Sample> samples;
  for (int j = 0; j < spec.count; ++j) {
    const auto sj = static_cast<std::uint64_t>(j);
    const Signal x = gen_piecewise_constant(A.grid(), spec.n_jumps, spec.amp_lo, spec.amp_hi,
                                            Rng::derive(spec.seed, 2 * sj));
    const std::uint64_t noise_seed = Rng::derive(spec.seed, 2 * sj + 1);
    for (int r = 0; r < spec.realizations; ++r) {
      const std::uint64_t s = r == 0 ? noise_seed : Rng::derive(noise_seed, static_cast<std::uint64_t>(r));
      samples.push_back({x, add_noise(x, A, spec.sigma, s)});
    }
  }
  return TrainSet(A, std::move(samples));
}

}  // namespace bilevel
