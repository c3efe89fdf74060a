#pragma once

// Dataset-level hypergradients and the checks run by `gradcheck`.

#include <vector>

#include "bilevel/hypergrad.hpp"
#include "bilevel/upper_opt.hpp"

namespace bilevel {

struct DatasetGradient {
  ThetaVector grad;  // mean over samples
  double loss = 0.0;
  long lower_iters = 0;
};

// Lower GD from A'y under `solver`, then the minimizer engine, per sample.
DatasetGradient dataset_hypergrad_minimizer(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                                            const GDConfig& solver, const MinimizerOptions& mo, int threads = 1);

// Unrolled engine (reverse or forward) from A'y with T steps of size `step`.
DatasetGradient dataset_hypergrad_unrolled(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                                           HypergradMethod method, long T, double step, int threads = 1);

// Central differences of evaluate_upper along each theta coordinate.
ThetaVector dataset_fd_gradient(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                                const GDConfig& solver, double h, int threads = 1);

struct ToleranceRow {
  double tol = 0.0;
  double angle_deg = 0.0;  // against the reference gradient
  double rel_err = 0.0;
  long lower_iters = 0;
  bool monotone = true;  // angle_deg <= (1 + slack) * previous row's angle_deg
};

struct ToleranceSweep {
  ThetaVector reference;
  std::vector<ToleranceRow> rows;  // in the order of `tolerances`
};

// Minimizer-engine gradient at each lower tolerance against the one at reference_tol.
ToleranceSweep tolerance_sweep(const HyperParams& hp, const TrainSet& train, const LossSpec& loss,
                               const std::vector<double>& tolerances, double reference_tol, long max_lower_iters,
                               double cg_tol, double slack = 0.1, int threads = 1);

}  // namespace bilevel
