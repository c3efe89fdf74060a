#pragma once

// Synthetic training data: piecewise-constant signals and Gaussian measurement noise.

#include <cstdint>
#include <string>

#include "bilevel/forward_model.hpp"
#include "bilevel/signal.hpp"
#include "bilevel/upper_opt.hpp"

namespace bilevel {

// 1-D: n_jumps distinct jump positions in 1..N-1 (never at the wrap-around),
// levels uniform on [amp_lo, amp_hi] with every jump changing the level.
// 2-D: n_jumps / 2 row cuts and the rest column cuts, one uniform level per block.
Signal gen_piecewise_constant(const Grid& grid, int n_jumps, double amp_lo, double amp_hi, std::uint64_t seed);

// y = A x + n with n i.i.d. N(0, sigma^2).
Signal add_noise(const Signal& x, const ForwardModel& A, double sigma, std::uint64_t seed);

struct DatasetSpec {
  std::string generator = "piecewise_constant";
  int count = 8;
  int n_jumps = 4;
  double amp_lo = -1.0;
  double amp_hi = 1.0;
  double sigma = 0.05;
  std::uint64_t seed = 0;
  int realizations = 1;  // noise realizations per image
};

// Image j uses Rng::derive(seed, 2 j), its r-th noise realization
// Rng::derive(seed, 2 j + 1) for r = 0 and Rng::derive(Rng::derive(seed, 2 j + 1), r) after.
TrainSet make_dataset(const DatasetSpec& spec, const ForwardModel& A);

}  // namespace bilevel
