#pragma once

// Experiment configuration (JSON). Every key in the document must be consumed
// by the parser; anything else is rejected with its full key path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bilevel/data.hpp"
#include "bilevel/hypergrad.hpp"
#include "bilevel/losses.hpp"
#include "bilevel/upper_opt.hpp"

namespace bilevel {

struct ForwardSpec {
  std::string kind = "identity";  // identity | mask | circulant
  double keep_fraction = 0.7;     // mask: fraction of kept pixels, drawn from the experiment seed
  std::optional<Filter> kernel;   // circulant
};

struct EngineSpec {
  HypergradMethod method = HypergradMethod::Minimizer;
  double cg_tol = 1e-10;
  long unroll_T = 100;
  std::optional<double> unroll_step;
};

struct LowerSpec {
  std::optional<double> tol;  // gradient-norm tolerance; nullopt selects 1e-6 sqrt(N)
  long max_iters = 100000;
  std::optional<double> step;  // nullopt selects 1/L
};

struct OptimizerSpec {
  std::string kind = "hoag";  // hoag | ba | ttsa | stable | gd | adam
  HoagConfig hoag;
  BaConfig ba;
  TtsaConfig ttsa;
  StableConfig stable;
  DriverConfig driver;  // gd and adam
};

struct DataSpec {
  DatasetSpec dataset;
  std::optional<std::filesystem::path> dir;  // load x_true_NNNN.sig / y_NNNN.sig instead of generating
};

struct GradcheckSpec {
  std::vector<double> tolerances{1e-1, 1e-2, 1e-4, 1e-8};
  double reference_tol = 1e-12;
  double fd_step = 1e-5;
  double fd_rel_tol = 1e-5;
  std::vector<long> unroll_T{1, 5, 50};
};

struct SweepSpec {
  std::vector<double> beta0;
};

struct OutputSpec {
  std::filesystem::path dir = "out";
  long snapshot_every = 0;  // write params_iter_NNNN.json every this many iterations; 0 disables
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Grid grid{{64}};
  ForwardSpec forward;
  Potential potential;
  InitSpec init;
  std::optional<std::filesystem::path> init_params_file;
  LossSpec loss = MseLoss{};
  EngineSpec engine;
  LowerSpec lower;
  OptimizerSpec optimizer;
  DataSpec train;
  DataSpec test;
  GradcheckSpec gradcheck;
  SweepSpec sweep;
  int threads = 1;
  OutputSpec output;
};

// Throws ConfigError naming the offending key path.
ExperimentConfig parse_config(std::string_view json_text);
// Relative paths inside the file resolve against the file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);

ForwardModel build_forward_model(const ExperimentConfig& cfg);
// "<stem>_NNNN.sig", the per-sample file name used by gen-data and data.dir.
std::string sample_file_name(const char* stem, std::size_t j);
TrainSet build_dataset(const DataSpec& spec, const ForwardModel& A);
HyperParams build_initial_params(const ExperimentConfig& cfg, const TrainSet& train);
GDConfig lower_solver(const ExperimentConfig& cfg);

}  // namespace bilevel
