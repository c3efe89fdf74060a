#pragma once

// Upper-level optimizers over theta: HOAG and BA double loops, TTSA and STABLE
// single loops, a plain GD/Adam driver over any hypergradient engine, and a
// grid search over beta0.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "bilevel/hypergrad.hpp"
#include "bilevel/losses.hpp"
#include "bilevel/lower_level.hpp"
#include "bilevel/solvers.hpp"

namespace bilevel {

struct Sample {
  Signal x_true;
  Signal y;
};

// Training pairs sharing one forward model and grid.
class TrainSet {
 public:
  TrainSet(ForwardModel A, std::vector<Sample> samples);

  const ForwardModel& forward_model() const { return A_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const Grid& grid() const { return A_.grid(); }

  LowerProblem problem(std::size_t j, const HyperParams& hp) const;
  UpperLoss loss(std::size_t j, const LossSpec& spec) const;
  // A'y_j, the default lower-level starting point.
  Signal default_x0(std::size_t j) const;
  std::vector<Signal> default_x0() const;

 private:
  ForwardModel A_;
  std::vector<Sample> samples_;
};

struct ConstantStep {
  double alpha = 0.1;
};
// Halve after a loss increase, grow by `grow` after a decrease.
struct AdaptiveStep {
  double alpha0 = 0.1;
  double shrink = 0.5;
  double grow = 1.05;
};
// a * i^{-exponent}, i = 1, 2, ...
struct PowerLawStep {
  double a = 0.1;
  double exponent = 0.5;
  double at(long i) const;
};
using StepSchedule = std::variant<ConstantStep, AdaptiveStep, PowerLawStep>;

struct TraceRecord {
  long iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  long lower_iters = 0;
  double step_upper = 0.0;
  double step_lower = 0.0;
  double wall_ms = 0.0;
  ThetaVector theta;  // snapshot before the step
};

struct OptTrace {
  std::vector<TraceRecord> records;
  long total_lower_iters() const;
};

struct OptResult {
  HyperParams params;
  OptTrace trace;
  std::vector<Signal> x;    // final lower-level iterate per sample
  std::string stop_reason;  // "max_iters" or "rel_change"
};

struct UpperEval {
  double value = 0.0;
  std::vector<double> per_sample;
  std::vector<Signal> x_hat;
  long lower_iters = 0;
};

// Mean over samples of the loss at each sample's gradient-descent solution.
// x0 defaults to A'y per sample.
UpperEval evaluate_upper(const HyperParams& hp, const TrainSet& train, const LossSpec& loss, const GDConfig& solver,
                         const std::vector<Signal>* x0 = nullptr, int threads = 1);

struct HoagConfig {
  long max_upper = 100;
  // Inner tolerance eps_i = eps0 / i^eps_power shared by the lower solve and CG.
  double eps0 = 1e-2;
  double eps_power = 2.0;
  StepSchedule step = ConstantStep{};
  long max_lower_iters = 100000;
  long cg_max_iters = 0;  // 0 selects 10 N
  bool warm_start = true;
  // Stop when ||theta+ - theta|| / ||theta|| <= rel_change_tol; zero disables.
  double rel_change_tol = 0.01;
  int threads = 1;
};

// Throws StepTooLargeError after 10 consecutive loss increases under ConstantStep.
OptResult hoag(const HyperParams& init, const TrainSet& train, const LossSpec& loss, const HoagConfig& cfg);

enum class LowerStepRule { InverseL, TwoOverLPlusMu, Fixed };  // 1/L, 2/(L+mu), fixed value
enum class InnerGrowth { Constant, Linear };                 // T_i = T or T * i

struct BaConfig {
  long max_upper = 100;
  double step_upper = 0.1;
  LowerStepRule lower_rule = LowerStepRule::InverseL;
  double lower_step = 0.0;  // used by LowerStepRule::Fixed
  long inner_iters = 10;
  InnerGrowth inner_growth = InnerGrowth::Constant;
  bool warm_start = true;
  std::optional<ThetaVector> box_lo, box_hi;
  double cg_tol = 1e-10;
  double rel_change_tol = 0.01;
  int threads = 1;
};

OptResult ba(const HyperParams& init, const TrainSet& train, const LossSpec& loss, const BaConfig& cfg);

struct TtsaConfig {
  long max_iter = 200;
  PowerLawStep upper{0.1, 0.75};
  // Lower step a * i^{-exponent} / L(theta_i).
  PowerLawStep lower{1.0, 0.5};
  std::size_t batch = 4;
  std::uint64_t seed = 0;
  double cg_tol = 1e-10;
  double rel_change_tol = 0.0;
};

OptResult ttsa(const HyperParams& init, const TrainSet& train, const LossSpec& loss, const TtsaConfig& cfg);

// Dense STABLE. Each sample keeps its own lower iterate and recursive Hessian
// and mixed-Jacobian estimates; one sample is visited per iteration.
inline constexpr std::size_t kStableMaxSize = 64;

struct StableConfig {
  long max_iter = 200;
  double tau = 0.5;
  double mu = 0.0;         // eigenvalue floor; 0 selects sigma_N^2(A), which must be positive
  double mix_cap = 1e3;    // Frobenius-norm cap on the mixed-Jacobian estimate
  double step_upper = 0.1;
  std::optional<double> step_lower;  // nullopt selects 1/L(theta_i)
  std::uint64_t seed = 0;
  double rel_change_tol = 0.0;
};

struct StableSampleState {
  Signal x;
  bool primed = false;
  Signal x_prev;
  HyperParams params_prev;
  Eigen::MatrixXd H;  // N x N
  Eigen::MatrixXd M;  // N x P, d/dtheta grad_x Phi
};

struct StableState {
  HyperParams params;
  std::vector<StableSampleState> samples;
};

struct StableStepInfo {
  double loss = 0.0;
  double grad_norm = 0.0;
  double step_lower = 0.0;
};

StableState stable_init(const HyperParams& init, const TrainSet& train, const std::vector<Signal>* x0 = nullptr);
StableStepInfo stable_step(StableState& state, const TrainSet& train, const LossSpec& loss, std::size_t sample,
                           const StableConfig& cfg);
OptResult stable(const HyperParams& init, const TrainSet& train, const LossSpec& loss, const StableConfig& cfg);

// Symmetric part of H with eigenvalues below mu raised to mu.
Eigen::MatrixXd project_eigen_floor(const Eigen::MatrixXd& H, double mu);
// M scaled into the Frobenius ball of radius cap.
Eigen::MatrixXd project_frobenius(const Eigen::MatrixXd& M, double cap);

enum class UpperOptimizer { GD, Adam };

struct DriverConfig {
  HypergradMethod engine = HypergradMethod::Minimizer;
  UpperOptimizer optimizer = UpperOptimizer::GD;
  double step = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  long max_upper = 100;
  double rel_change_tol = 0.01;
  // Minimizer engine.
  double lower_tol = 1e-8;
  long max_lower_iters = 100000;
  double cg_tol = 1e-10;
  bool warm_start = true;
  // Unrolled engines: T steps from A'y with a step fixed for the whole run.
  long unroll_T = 100;
  std::optional<double> unroll_step;  // nullopt selects 1/L at the initial theta
  int threads = 1;
};

OptResult adam_or_gd_upper(const HyperParams& init, const TrainSet& train, const LossSpec& loss,
                           const DriverConfig& cfg);

struct GridRow {
  double beta0;
  double loss;
};

struct GridSearchResult {
  double best_beta0 = 0.0;
  std::size_t best_index = 0;
  std::vector<GridRow> table;  // in grid order
};

// Index of the first smallest loss in the table.
std::size_t select_best(const std::vector<GridRow>& table);

GridSearchResult grid_search(const std::vector<double>& beta0_grid, const HyperParams& base, const TrainSet& train,
                             const LossSpec& loss, const GDConfig& solver, int threads = 1);

struct InitSpec {
  std::size_t filter_count = 1;
  std::vector<int> extents{2};
  Potential potential;
  LearnMask learn;
  std::uint64_t seed = 0;
  std::optional<double> beta0;  // nullopt selects the gradient-balancing rule
  std::optional<std::vector<Filter>> filters;  // replaces the random filters; sets filter_count
  std::optional<std::vector<double>> betas;    // replaces beta_k = 0
};

// Filters: seeded standard normal, mean-subtracted (when they have more than
// one tap), unit 2-norm. beta_k = 0. beta0 = ln(sum_j ||A'y_j|| / sum_j ||R'(A'y_j)||)
// where R' is the regularizer gradient at beta0 = 0, so the data-fit gradient at
// x = 0 and the regularizer gradient at x = A'y have equal total norm.
HyperParams initialize_params(const InitSpec& spec, const TrainSet& train);

}  // namespace bilevel
