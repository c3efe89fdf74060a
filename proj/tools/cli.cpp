#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bilevel/config.hpp"
#include "bilevel/errors.hpp"
#include "bilevel/gradcheck.hpp"
#include "bilevel/io.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Raised when a gradcheck comparison fails; reported with kind "check".
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out_dir;
  std::string params;
  std::string input;
  std::string output;
  std::string reference;
  std::optional<double> tol;
  std::optional<long> max_iters;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (!o.out_dir.empty()) cfg.output.dir = o.out_dir;
  return cfg;
}

OptResult run_optimizer(const ExperimentConfig& cfg, const HyperParams& init, const TrainSet& train) {
  const OptimizerSpec& o = cfg.optimizer;
  if (o.kind == "hoag") return hoag(init, train, cfg.loss, o.hoag);
  if (o.kind == "ba") return ba(init, train, cfg.loss, o.ba);
  if (o.kind == "ttsa") return ttsa(init, train, cfg.loss, o.ttsa);
  if (o.kind == "stable") return stable(init, train, cfg.loss, o.stable);
  DriverConfig d = o.driver;
  const GDConfig solver = lower_solver(cfg);
  d.lower_tol = solver.grad_tol;
  return adam_or_gd_upper(init, train, cfg.loss, d);
}

std::string numbered(const char* stem, long i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04ld%s", stem, i, ext);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text); }

int cmd_train(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load(o);
  const ForwardModel A = build_forward_model(cfg);
  const TrainSet train = build_dataset(cfg.train, A);
  const HyperParams init = build_initial_params(cfg, train);
  const OptResult r = run_optimizer(cfg, init, train);

  const fs::path dir = cfg.output.dir;
  write_params(dir / "params.json", r.params);
  std::ostringstream csv;
  write_trace_csv(csv, r.trace);
  write_text(dir / "trace.csv", csv.str());
  if (cfg.output.snapshot_every > 0) {
    const ThetaLayout layout(init);
    for (const TraceRecord& rec : r.trace.records)
      if (rec.iteration % cfg.output.snapshot_every == 0)
        write_params(dir / "snapshots" / numbered("params_iter", rec.iteration, ".json"),
                     layout.unpack(init, rec.theta));
  }
  const double final_loss = r.trace.records.empty() ? 0.0 : r.trace.records.back().loss;
  out << "optimizer " << cfg.optimizer.kind << ": " << r.trace.records.size() << " iterations, stop "
      << r.stop_reason << ", last loss " << format_double(final_loss) << "\n";
  out << "wrote " << (dir / "params.json").string() << " and " << (dir / "trace.csv").string() << "\n";
  return 0;
}

int cmd_reconstruct(const Options& o, std::ostream& out) {
  const Signal y = read_signal(o.input);
  const HyperParams hp = read_params(o.params);
  std::optional<ExperimentConfig> cfg;
  if (!o.config.empty()) cfg = load(o);
  const ForwardModel A = cfg ? build_forward_model(*cfg) : ForwardModel::identity(y.grid());
  if (!(A.grid() == y.grid())) throw DimensionError("input signal grid differs from the forward model grid");
  GDConfig gd;
  if (cfg) {
    gd = lower_solver(*cfg);
  } else {
    gd.max_iters = 100000;
    gd.grad_tol = 1e-6 * std::sqrt(static_cast<double>(y.size()));
  }
  if (o.tol) gd.grad_tol = *o.tol;
  if (o.max_iters) gd.max_iters = *o.max_iters;
  hp.validate(y.grid());
  const GDResult r = gd_minimize(LowerProblem(A, y, hp), A.adjoint(y), gd);
  write_signal(o.output, r.x_final);
  out << "reconstructed " << o.output << " in " << r.iters_run << " iterations, final gradient norm "
      << format_double(r.final_grad_norm) << "\n";
  return 0;
}

std::string metrics_row(const std::string& name, const Metrics& m) {
  return name + "," + format_double(m.mse) + "," + format_double(m.mae) + "," + format_double(m.snr_db) + "," +
         format_double(m.psnr_db) + "\n";
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_eval(const Options& o, std::ostream& out) {
  std::string csv = "sample,mse,mae,snr_db,psnr_db\n";
  if (!o.input.empty()) {
    if (o.reference.empty()) throw ConfigError("eval --input needs --reference");
    csv += metrics_row("0", metrics(read_signal(o.input), read_signal(o.reference)));
  } else {
    if (o.config.empty() || o.params.empty())
      throw ConfigError("eval needs --input and --reference, or --config and --params");
    const ExperimentConfig cfg = load(o);
    const ForwardModel A = build_forward_model(cfg);
    const TrainSet test = build_dataset(cfg.test, A);
    const HyperParams hp = read_params(o.params);
    const UpperEval ev = evaluate_upper(hp, test, MseLoss{}, lower_solver(cfg), nullptr, cfg.threads);
    std::vector<Metrics> ms;
    for (std::size_t j = 0; j < test.size(); ++j) {
      ms.push_back(metrics(ev.x_hat[j], test.samples()[j].x_true));
      csv += metrics_row(std::to_string(j), ms.back());
    }
    const auto med = [&](double Metrics::*f) {
      std::vector<double> v;
      for (const Metrics& m : ms) v.push_back(m.*f);
      return median(v);
    };
    csv += metrics_row("median", {med(&Metrics::mse), med(&Metrics::mae), med(&Metrics::snr_db),
                                  med(&Metrics::psnr_db)});
  }
  if (o.output.empty()) {
    out << csv;
  } else {
    write_text(o.output, csv);
    out << "wrote " << o.output << "\n";
  }
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load(o);
  const GradcheckSpec& gc = cfg.gradcheck;
  const ForwardModel A = build_forward_model(cfg);
  const TrainSet train = build_dataset(cfg.train, A);
  const HyperParams hp = o.params.empty() ? build_initial_params(cfg, train) : read_params(o.params);
  hp.validate(train.grid());

  std::string report;
  int failed = 0, total = 0;
  const auto check = [&](bool ok, const std::string& what) {
    ++total;
    failed += ok ? 0 : 1;
    report += std::string(ok ? "PASS " : "FAIL ") + what + "\n";
  };

  // Minimizer engine against central differences, both with the reference lower tolerance.
  GDConfig tight;
  tight.grad_tol = gc.reference_tol;
  tight.max_iters = cfg.lower.max_iters;
  MinimizerOptions mo;
  mo.cg_tol = std::min(cfg.engine.cg_tol, gc.reference_tol);
  mo.warn_grad_norm = std::numeric_limits<double>::infinity();
  const ThetaVector g_min = dataset_hypergrad_minimizer(hp, train, cfg.loss, tight, mo, cfg.threads).grad;
  const ThetaVector g_fd = dataset_fd_gradient(hp, train, cfg.loss, tight, gc.fd_step, cfg.threads);
  const GradComparison fd = grad_compare(g_min, g_fd);
  check(fd.rel_norm_err <= gc.fd_rel_tol, "minimizer_vs_fd rel_err=" + format_double(fd.rel_norm_err) +
                                              " limit=" + format_double(gc.fd_rel_tol));

  // Reverse against forward unrolling with a common step.
  const double step = resolve_step(train.problem(0, hp), GDConfig{});
  for (long T : gc.unroll_T) {
    const ThetaVector gr =
        dataset_hypergrad_unrolled(hp, train, cfg.loss, HypergradMethod::UnrolledReverse, T, step, cfg.threads).grad;
    const ThetaVector gf =
        dataset_hypergrad_unrolled(hp, train, cfg.loss, HypergradMethod::UnrolledForward, T, step, cfg.threads).grad;
    const GradComparison c = grad_compare(gr, gf);
    check(c.rel_norm_err <= 1e-10,
          "reverse_vs_forward T=" + std::to_string(T) + " rel_err=" + format_double(c.rel_norm_err) + " limit=1e-10");
  }

  const ToleranceSweep sw = tolerance_sweep(hp, train, cfg.loss, gc.tolerances, gc.reference_tol,
                                            cfg.lower.max_iters, mo.cg_tol, 0.1, cfg.threads);
  std::string csv = "tolerance,angle_deg,rel_err,lower_iters,monotone\n";
  bool monotone = true;
  for (const ToleranceRow& r : sw.rows) {
    csv += format_double(r.tol) + "," + format_double(r.angle_deg) + "," + format_double(r.rel_err) + "," +
           std::to_string(r.lower_iters) + "," + (r.monotone ? "1" : "0") + "\n";
    monotone = monotone && r.monotone;
  }
  check(monotone, "tolerance_sweep angle nonincreasing within 10% slack");
  if (sw.rows.size() >= 2)
    check(sw.rows.back().angle_deg < sw.rows.front().angle_deg,
          "tolerance_sweep angle at tol=" + format_double(sw.rows.back().tol) + " below angle at tol=" +
              format_double(sw.rows.front().tol));

  const fs::path dir = cfg.output.dir;
  write_text(dir / "gradcheck_report.txt", report);
  write_text(dir / "gradcheck_angles.csv", csv);
  out << report << csv;
  if (failed > 0)
    throw CheckFailed(std::to_string(failed) + " of " + std::to_string(total) + " gradient checks failed");
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load(o);
  if (cfg.sweep.beta0.empty()) throw ConfigError("config key 'sweep': sweep needs a beta0 list or range");
  const ForwardModel A = build_forward_model(cfg);
  const TrainSet train = build_dataset(cfg.train, A);
  const HyperParams base = o.params.empty() ? build_initial_params(cfg, train) : read_params(o.params);
  const GridSearchResult r = grid_search(cfg.sweep.beta0, base, train, cfg.loss, lower_solver(cfg), cfg.threads);
  std::string csv = "beta0,loss,best\n";
  for (std::size_t i = 0; i < r.table.size(); ++i)
    csv += format_double(r.table[i].beta0) + "," + format_double(r.table[i].loss) + "," +
           (i == r.best_index ? "1" : "0") + "\n";
  const fs::path dir = cfg.output.dir;
  write_text(dir / "sweep.csv", csv);
  HyperParams best = base;
  best.beta0 = r.best_beta0;
  write_params(dir / "params.json", best);
  out << csv << "best beta0 " << format_double(r.best_beta0) << "\n";
  return 0;
}

json dataset_manifest(const DataSpec& d, std::size_t count) {
  return {{"generator", d.dataset.generator}, {"count", count},           {"images", d.dataset.count},
          {"n_jumps", d.dataset.n_jumps},     {"amp_lo", d.dataset.amp_lo}, {"amp_hi", d.dataset.amp_hi},
          {"sigma", d.dataset.sigma},         {"seed", d.dataset.seed},     {"realizations", d.dataset.realizations}};
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load(o);
  if (cfg.train.dir || cfg.test.dir) throw ConfigError("config key 'data': gen-data needs generator specs, not dirs");
  const ForwardModel A = build_forward_model(cfg);
  const fs::path dir = cfg.output.dir;
  json manifest = {{"rng", Rng::kAlgorithm}, {"grid", cfg.grid.extents()}, {"forward_model", cfg.forward.kind}};
  for (const auto& [name, spec] : {std::pair<const char*, const DataSpec*>{"train", &cfg.train},
                                   std::pair<const char*, const DataSpec*>{"test", &cfg.test}}) {
    const TrainSet set = make_dataset(spec->dataset, A);
    for (std::size_t j = 0; j < set.size(); ++j) {
      write_signal(dir / name / sample_file_name("x_true", j), set.samples()[j].x_true);
      write_signal(dir / name / sample_file_name("y", j), set.samples()[j].y);
    }
    manifest[name] = dataset_manifest(*spec, set.size());
    out << "wrote " << set.size() << " " << name << " samples to " << (dir / name).string() << "\n";
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
  if (dynamic_cast<const SpdViolationError*>(&e)) return "spd";
  if (dynamic_cast<const StepTooLargeError*>(&e)) return "step";
  if (dynamic_cast<const UnboundedConstantError*>(&e)) return "unbounded";
  if (dynamic_cast<const CheckFailed*>(&e)) return "check";
  return "runtime";
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bilevel learning of sparsity-promoting regularizers", "blvl"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config,-c", o.config, "experiment config (JSON)");
    if (config_required) c->required();
    sub->add_option("--out,-o", o.out_dir, "output directory (overrides output.dir)");
  };

  CLI::App* train = app.add_subcommand("train", "run the configured upper-level optimizer");
  add_common(train, true);

  CLI::App* reconstruct = app.add_subcommand("reconstruct", "solve the lower level for a measurement");
  reconstruct->add_option("--params,-p", o.params, "params file")->required();
  reconstruct->add_option("--input,-i", o.input, "measurement signal file")->required();
  reconstruct->add_option("--output", o.output, "reconstruction signal file")->required();
  reconstruct->add_option("--config,-c", o.config, "config providing the forward model and solver");
  reconstruct->add_option("--tol", o.tol, "lower-level gradient-norm tolerance");
  reconstruct->add_option("--max-iters", o.max_iters, "lower-level iteration cap");

  CLI::App* eval = app.add_subcommand("eval", "reconstruction metrics as CSV");
  eval->add_option("--input,-i", o.input, "reconstruction signal file");
  eval->add_option("--reference,-r", o.reference, "ground-truth signal file");
  eval->add_option("--config,-c", o.config, "config whose test set is reconstructed");
  eval->add_option("--params,-p", o.params, "params file used with --config");
  eval->add_option("--output", o.output, "CSV path (stdout when omitted)");
  eval->add_option("--out,-o", o.out_dir, "output directory (overrides output.dir)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "hypergradient checks and the tolerance sweep");
  add_common(gradcheck, true);
  gradcheck->add_option("--params,-p", o.params, "params file (default: the configured initialization)");

  CLI::App* sweep = app.add_subcommand("sweep", "grid search over beta0");
  add_common(sweep, true);
  sweep->add_option("--params,-p", o.params, "base params file (default: the configured initialization)");

  CLI::App* gen = app.add_subcommand("gen-data", "write the configured train and test sets");
  add_common(gen, true);

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    bool known = false;
    for (const CLI::App* sub : app.get_subcommands({})) known = known || sub->get_name() == name;
    if (!known) {
      err << "error: usage: unknown subcommand '" << name << "'\n" << app.help();
      return 2;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(o, out);
    if (reconstruct->parsed()) return cmd_reconstruct(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (gradcheck->parsed()) return cmd_gradcheck(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out);
    if (gen->parsed()) return cmd_gen_data(o, out);
  } catch (const std::exception& e) {
    err << "error: " << error_kind(e) << ": " << one_line(e.what()) << "\n";
    return 1;
  }
  err << "error: usage: no subcommand\n" << app.help();
  return 2;
}

}  // namespace bilevel
