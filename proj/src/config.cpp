#include "bilevel/config.hpp"

#include <cmath>
#include <set>

#include "json.hpp"

#include "bilevel/errors.hpp"
#include "bilevel/io.hpp"
#include "bilevel/rng.hpp"

namespace bilevel {

namespace {

using nlohmann::json;

// Stream ids for seeds derived from the experiment seed.
constexpr std::uint64_t kTrainStream = 1, kTestStream = 2, kInitStream = 3, kMaskStream = 4, kTtsaStream = 5,
                        kStableStream = 6, kSureStream = 7;

// Object view that records which keys were read. finish() rejects the rest.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& key, const std::string& what) {
    throw ConfigError("config key '" + key + "': " + what);
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_->contains(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_->at(key);
  }

  Node child(const std::string& key) { return Node(raw(key), key_path(key)); }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(key_path(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key_path(key), "expected a finite number");
    return d;
  }
  double number(const std::string& key, double def) { return has(key) ? number(key) : def; }
  std::optional<double> opt_number(const std::string& key) {
    return has(key) ? std::optional<double>(number(key)) : std::nullopt;
  }

  long integer(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_integer()) fail(key_path(key), "expected an integer");
    return v.get<long>();
  }
  long integer(const std::string& key, long def) { return has(key) ? integer(key) : def; }

  std::uint64_t seed(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long>() >= 0) return static_cast<std::uint64_t>(v.get<long>());
    fail(key_path(key), "expected a nonnegative integer");
  }
  std::uint64_t seed(const std::string& key, std::uint64_t def) { return has(key) ? seed(key) : def; }

  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_boolean()) fail(key_path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(key_path(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& def) { return has(key) ? string(key) : def; }

  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(key_path(key), "expected an array of numbers");
    std::vector<double> out;
    for (const json& e : v) {
      if (!e.is_number() || !std::isfinite(e.get<double>())) fail(key_path(key), "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<long> integers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(key_path(key), "expected an array of integers");
    std::vector<long> out;
    for (const json& e : v) {
      if (!e.is_number_integer()) fail(key_path(key), "expected an array of integers");
      out.push_back(e.get<long>());
    }
    return out;
  }

  double positive(const std::string& key, double def) {
    const double v = number(key, def);
    if (!(v > 0.0)) fail(key_path(key), "must be positive");
    return v;
  }
  double nonnegative(const std::string& key, double def) {
    const double v = number(key, def);
    if (!(v >= 0.0)) fail(key_path(key), "must be nonnegative");
    return v;
  }
  long positive_integer(const std::string& key, long def) {
    const long v = integer(key, def);
    if (v < 1) fail(key_path(key), "must be a positive integer");
    return v;
  }

  void finish() const {
    for (const auto& item : j_->items())
      if (!used_.count(item.key())) fail(key_path(item.key()), "unknown or unused key");
  }

  const std::string& path() const { return path_; }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<int> parse_extents(Node& n, const std::string& key, int max_rank) {
  std::vector<int> out;
  for (long e : n.integers(key)) {
    if (e < 1 || e > (1L << 24)) Node::fail(n.key_path(key), "extents must be positive");
    out.push_back(static_cast<int>(e));
  }
  if (out.empty() || static_cast<int>(out.size()) > max_rank) Node::fail(n.key_path(key), "rank must be 1 or 2");
  return out;
}

Filter parse_filter(Node& n) {
  const std::vector<int> extents = parse_extents(n, "extents", 2);
  const std::vector<double> taps = n.numbers("taps");
  try {
    return Filter(extents, taps);
  } catch (const DimensionError& e) {
    Node::fail(n.key_path("taps"), e.what());
  }
}

Potential parse_potential(Node n) {
  const std::string kind = n.string("kind", "corner_rounded");
  Potential p;
  if (kind == "corner_rounded") {
    p = Potential::corner_rounded(n.positive("eps", 0.01));
  } else if (kind == "quadratic") {
    p = Potential::quadratic();
  } else {
    Node::fail(n.key_path("kind"), "unknown potential '" + kind + "'");
  }
  n.finish();
  return p;
}

LossSpec parse_loss(Node n, std::uint64_t seed) {
  const std::string kind = n.string("kind", "mse");
  LossSpec out;
  if (kind == "mse") {
    out = MseLoss{};
  } else if (kind == "huber") {
    out = HuberLoss{n.positive("eps", 0.01)};
  } else if (kind == "discrepancy") {
    out = DiscrepancyLoss{n.nonnegative("sigma", 0.1)};
  } else if (kind == "noise_corridor") {
    NoiseCorridorLoss l;
    l.var_lo = n.nonnegative("var_lo", 0.0);
    l.var_hi = n.nonnegative("var_hi", 0.0);
    if (l.var_lo > l.var_hi) Node::fail(n.key_path("var_lo"), "must not exceed var_hi");
    out = l;
  } else if (kind == "sure_mc") {
    SureMcLoss l;
    l.sigma = n.nonnegative("sigma", 0.1);
    l.probe_eps = n.opt_number("probe_eps");
    if (l.probe_eps && !(*l.probe_eps > 0.0)) Node::fail(n.key_path("probe_eps"), "must be positive");
    l.n_probes = static_cast<int>(n.positive_integer("n_probes", 1));
    l.seed = n.seed("seed", Rng::derive(seed, kSureStream));
    out = l;
  } else {
    Node::fail(n.key_path("kind"), "unknown loss '" + kind + "'");
  }
  n.finish();
  return out;
}

StepSchedule parse_step_schedule(Node n) {
  const std::string rule = n.string("rule", "constant");
  StepSchedule out;
  if (rule == "constant") {
    out = ConstantStep{n.positive("alpha", 0.1)};
  } else if (rule == "adaptive") {
    AdaptiveStep s;
    s.alpha0 = n.positive("alpha0", s.alpha0);
    s.shrink = n.positive("shrink", s.shrink);
    s.grow = n.positive("grow", s.grow);
    if (s.shrink >= 1.0) Node::fail(n.key_path("shrink"), "must be below 1");
    if (s.grow < 1.0) Node::fail(n.key_path("grow"), "must be at least 1");
    out = s;
  } else if (rule == "power_law") {
    out = PowerLawStep{n.positive("a", 0.1), n.nonnegative("exponent", 0.5)};
  } else {
    Node::fail(n.key_path("rule"), "unknown step rule '" + rule + "'");
  }
  n.finish();
  return out;
}

PowerLawStep parse_power_law(Node n, PowerLawStep def) {
  PowerLawStep s{n.positive("a", def.a), n.nonnegative("exponent", def.exponent)};
  n.finish();
  return s;
}

void parse_optimizer(Node n, ExperimentConfig& cfg) {
  OptimizerSpec& o = cfg.optimizer;
  o.kind = n.string("kind", "hoag");
  const int threads = cfg.threads;
  if (o.kind == "hoag") {
    HoagConfig& h = o.hoag;
    h.max_upper = n.positive_integer("max_upper", h.max_upper);
    h.eps0 = n.positive("eps0", h.eps0);
    h.eps_power = n.nonnegative("eps_power", h.eps_power);
    if (n.has("step")) h.step = parse_step_schedule(n.child("step"));
    h.max_lower_iters = n.positive_integer("max_lower_iters", cfg.lower.max_iters);
    h.cg_max_iters = n.integer("cg_max_iters", h.cg_max_iters);
    if (h.cg_max_iters < 0) Node::fail(n.key_path("cg_max_iters"), "must be nonnegative");
    h.warm_start = n.boolean("warm_start", h.warm_start);
    h.rel_change_tol = n.nonnegative("rel_change_tol", h.rel_change_tol);
    h.threads = threads;
  } else if (o.kind == "ba") {
    BaConfig& b = o.ba;
    b.max_upper = n.positive_integer("max_upper", b.max_upper);
    b.step_upper = n.positive("step", b.step_upper);
    if (n.has("lower_step")) {
      const json& v = n.raw("lower_step");
      if (v.is_number()) {
        b.lower_rule = LowerStepRule::Fixed;
        b.lower_step = n.positive("lower_step", 0.0);
      } else if (v == "inverse_L") {
        b.lower_rule = LowerStepRule::InverseL;
      } else if (v == "two_over_L_plus_mu") {
        b.lower_rule = LowerStepRule::TwoOverLPlusMu;
      } else {
        Node::fail(n.key_path("lower_step"), "expected a number, \"inverse_L\" or \"two_over_L_plus_mu\"");
      }
    }
    b.inner_iters = n.positive_integer("inner_iters", b.inner_iters);
    const std::string growth = n.string("inner_growth", "constant");
    if (growth == "constant") {
      b.inner_growth = InnerGrowth::Constant;
    } else if (growth == "linear") {
      b.inner_growth = InnerGrowth::Linear;
    } else {
      Node::fail(n.key_path("inner_growth"), "expected \"constant\" or \"linear\"");
    }
    b.warm_start = n.boolean("warm_start", b.warm_start);
    if (n.has("box")) {
      Node box = n.child("box");
      b.box_lo = box.numbers("lo");
      b.box_hi = box.numbers("hi");
      if (b.box_lo->size() != b.box_hi->size()) Node::fail(box.key_path("hi"), "length differs from lo");
      for (std::size_t i = 0; i < b.box_lo->size(); ++i)
        if ((*b.box_lo)[i] > (*b.box_hi)[i]) Node::fail(box.key_path("lo"), "lower bound exceeds upper bound");
      box.finish();
    }
    b.cg_tol = n.positive("cg_tol", cfg.engine.cg_tol);
    b.rel_change_tol = n.nonnegative("rel_change_tol", b.rel_change_tol);
    b.threads = threads;
  } else if (o.kind == "ttsa") {
    TtsaConfig& t = o.ttsa;
    t.max_iter = n.positive_integer("max_iter", t.max_iter);
    if (n.has("upper")) t.upper = parse_power_law(n.child("upper"), t.upper);
    if (n.has("lower")) t.lower = parse_power_law(n.child("lower"), t.lower);
    t.batch = static_cast<std::size_t>(n.positive_integer("batch", static_cast<long>(t.batch)));
    t.seed = n.seed("seed", Rng::derive(cfg.seed, kTtsaStream));
    t.cg_tol = n.positive("cg_tol", cfg.engine.cg_tol);
    t.rel_change_tol = n.nonnegative("rel_change_tol", t.rel_change_tol);
  } else if (o.kind == "stable") {
    StableConfig& s = o.stable;
    s.max_iter = n.positive_integer("max_iter", s.max_iter);
    s.tau = n.number("tau", s.tau);
    if (!(s.tau > 0.0 && s.tau <= 1.0)) Node::fail(n.key_path("tau"), "must lie in (0, 1]");
    s.mu = n.nonnegative("mu", s.mu);
    s.mix_cap = n.positive("mix_cap", s.mix_cap);
    s.step_upper = n.positive("step", s.step_upper);
    if (n.has("step_lower")) s.step_lower = n.positive("step_lower", 1.0);
    s.seed = n.seed("seed", Rng::derive(cfg.seed, kStableStream));
    s.rel_change_tol = n.nonnegative("rel_change_tol", s.rel_change_tol);
  } else if (o.kind == "gd" || o.kind == "adam") {
    DriverConfig& d = o.driver;
    d.optimizer = o.kind == "gd" ? UpperOptimizer::GD : UpperOptimizer::Adam;
    d.engine = cfg.engine.method;
    d.step = n.positive("step", d.step);
    if (o.kind == "adam") {
      d.adam_beta1 = n.number("beta1", d.adam_beta1);
      d.adam_beta2 = n.number("beta2", d.adam_beta2);
      if (!(d.adam_beta1 >= 0.0 && d.adam_beta1 < 1.0)) Node::fail(n.key_path("beta1"), "must lie in [0, 1)");
      if (!(d.adam_beta2 >= 0.0 && d.adam_beta2 < 1.0)) Node::fail(n.key_path("beta2"), "must lie in [0, 1)");
      d.adam_eps = n.positive("eps", d.adam_eps);
    }
    d.max_upper = n.positive_integer("max_upper", d.max_upper);
    d.rel_change_tol = n.nonnegative("rel_change_tol", d.rel_change_tol);
    d.max_lower_iters = cfg.lower.max_iters;
    d.cg_tol = cfg.engine.cg_tol;
    d.warm_start = n.boolean("warm_start", d.warm_start);
    d.unroll_T = cfg.engine.unroll_T;
    d.unroll_step = cfg.engine.unroll_step;
    d.threads = threads;
  } else {
    Node::fail(n.key_path("kind"), "unknown optimizer '" + o.kind + "'");
  }
  n.finish();
}

DataSpec parse_data(Node n, std::uint64_t default_seed) {
  DataSpec d;
  if (n.has("dir")) {
    d.dir = n.string("dir");
  } else {
    DatasetSpec& s = d.dataset;
    s.generator = n.string("generator", s.generator);
    if (s.generator != "piecewise_constant") Node::fail(n.key_path("generator"), "unknown generator");
    s.count = static_cast<int>(n.positive_integer("count", s.count));
    s.n_jumps = static_cast<int>(n.integer("n_jumps", s.n_jumps));
    if (s.n_jumps < 0) Node::fail(n.key_path("n_jumps"), "must be nonnegative");
    s.amp_lo = n.number("amp_lo", s.amp_lo);
    s.amp_hi = n.number("amp_hi", s.amp_hi);
    if (s.amp_lo > s.amp_hi) Node::fail(n.key_path("amp_lo"), "must not exceed amp_hi");
    s.sigma = n.nonnegative("sigma", s.sigma);
    s.realizations = static_cast<int>(n.positive_integer("realizations", s.realizations));
  }
  d.dataset.seed = n.seed("seed", default_seed);
  n.finish();
  return d;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

ExperimentConfig parse_impl(std::string_view text, const std::filesystem::path& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Node root(doc, "");
  ExperimentConfig cfg;
  if (!root.has("seed")) Node::fail("seed", "is mandatory");
  cfg.seed = root.seed("seed");
  cfg.threads = static_cast<int>(root.positive_integer("threads", 1));

  if (root.has("grid")) {
    Node g = root.child("grid");
    cfg.grid = Grid(parse_extents(g, "extents", 2));
    g.finish();
  }

  if (root.has("forward_model")) {
    Node f = root.child("forward_model");
    cfg.forward.kind = f.string("kind", "identity");
    if (cfg.forward.kind == "mask") {
      cfg.forward.keep_fraction = f.number("keep_fraction", cfg.forward.keep_fraction);
      if (!(cfg.forward.keep_fraction > 0.0 && cfg.forward.keep_fraction <= 1.0))
        Node::fail(f.key_path("keep_fraction"), "must lie in (0, 1]");
    } else if (cfg.forward.kind == "circulant") {
      Node k = f.child("kernel");
      cfg.forward.kernel = parse_filter(k);
      k.finish();
    } else if (cfg.forward.kind != "identity") {
      Node::fail(f.key_path("kind"), "unknown forward model '" + cfg.forward.kind + "'");
    }
    f.finish();
  }

  if (root.has("potential")) cfg.potential = parse_potential(root.child("potential"));

  // Solver sections come first because optimizer defaults are drawn from them.
  if (root.has("lower")) {
    Node l = root.child("lower");
    cfg.lower.tol = l.opt_number("tol");
    if (cfg.lower.tol && !(*cfg.lower.tol >= 0.0)) Node::fail(l.key_path("tol"), "must be nonnegative");
    cfg.lower.max_iters = l.positive_integer("max_iters", cfg.lower.max_iters);
    if (l.has("step")) cfg.lower.step = l.positive("step", 1.0);
    l.finish();
  }
  if (root.has("engine")) {
    Node e = root.child("engine");
    try {
      cfg.engine.method = parse_method(e.string("method", "minimizer"));
    } catch (const ConfigError& err) {
      Node::fail(e.key_path("method"), err.what());
    }
    cfg.engine.cg_tol = e.positive("cg_tol", cfg.engine.cg_tol);
    cfg.engine.unroll_T = e.positive_integer("unroll_T", cfg.engine.unroll_T);
    if (e.has("unroll_step")) cfg.engine.unroll_step = e.positive("unroll_step", 1.0);
    e.finish();
  }

  cfg.init.potential = cfg.potential;
  std::optional<std::vector<std::vector<double>>> init_taps;
  cfg.init.seed = Rng::derive(cfg.seed, kInitStream);
  if (root.has("init")) {
    Node i = root.child("init");
    if (i.has("params_file")) {
      cfg.init_params_file = resolve(base, i.string("params_file"));
    } else {
      if (i.has("taps")) {
        const json& t = i.raw("taps");
        if (!t.is_array() || t.empty()) Node::fail(i.key_path("taps"), "expected a nonempty array of tap arrays");
        std::vector<std::vector<double>> taps;
        for (const json& f : t) {
          if (!f.is_array()) Node::fail(i.key_path("taps"), "expected a nonempty array of tap arrays");
          std::vector<double> row;
          for (const json& v : f) {
            if (!v.is_number()) Node::fail(i.key_path("taps"), "taps must be numbers");
            row.push_back(v.get<double>());
          }
          taps.push_back(std::move(row));
        }
        cfg.init.filter_count = taps.size();
        init_taps = std::move(taps);
      } else {
        cfg.init.filter_count = static_cast<std::size_t>(i.positive_integer("filters", 1));
      }
      if (i.has("extents")) cfg.init.extents = parse_extents(i, "extents", 2);
      cfg.init.seed = i.seed("seed", cfg.init.seed);
      cfg.init.beta0 = i.opt_number("beta0");
      if (i.has("betas")) {
        cfg.init.betas = i.numbers("betas");
        if (cfg.init.betas->size() != cfg.init.filter_count)
          Node::fail(i.key_path("betas"), "length differs from the filter count");
      }
    }
    if (i.has("learn")) {
      Node l = i.child("learn");
      cfg.init.learn.beta0 = l.boolean("beta0", cfg.init.learn.beta0);
      cfg.init.learn.betas = l.boolean("betas", cfg.init.learn.betas);
      cfg.init.learn.filters = l.boolean("filters", cfg.init.learn.filters);
      l.finish();
    }
    i.finish();
  }

  if (root.has("loss")) cfg.loss = parse_loss(root.child("loss"), cfg.seed);

  if (root.has("optimizer")) {
    parse_optimizer(root.child("optimizer"), cfg);
  } else {
    cfg.optimizer.hoag.max_lower_iters = cfg.lower.max_iters;
    cfg.optimizer.hoag.threads = cfg.threads;
  }

  const std::uint64_t train_seed = Rng::derive(cfg.seed, kTrainStream);
  const std::uint64_t test_seed = Rng::derive(cfg.seed, kTestStream);
  cfg.train.dataset.seed = train_seed;
  cfg.test.dataset.seed = test_seed;
  if (root.has("data")) {
    Node d = root.child("data");
    if (d.has("train")) cfg.train = parse_data(d.child("train"), train_seed);
    if (d.has("test")) {
      cfg.test = parse_data(d.child("test"), test_seed);
    } else {
      cfg.test.dataset = cfg.train.dataset;
      cfg.test.dataset.seed = test_seed;
    }
    if (!cfg.train.dir && !cfg.test.dir && cfg.train.dataset.seed == cfg.test.dataset.seed)
      Node::fail(d.key_path("test.seed"), "train and test generator seeds must differ");
    d.finish();
  }
  if (cfg.train.dir) cfg.train.dir = resolve(base, *cfg.train.dir);
  if (cfg.test.dir) cfg.test.dir = resolve(base, *cfg.test.dir);

  if (root.has("gradcheck")) {
    Node g = root.child("gradcheck");
    GradcheckSpec& s = cfg.gradcheck;
    if (g.has("tolerances")) {
      s.tolerances = g.numbers("tolerances");
      if (s.tolerances.empty()) Node::fail(g.key_path("tolerances"), "must not be empty");
      for (double t : s.tolerances)
        if (!(t > 0.0)) Node::fail(g.key_path("tolerances"), "entries must be positive");
    }
    s.reference_tol = g.positive("reference_tol", s.reference_tol);
    s.fd_step = g.positive("fd_step", s.fd_step);
    s.fd_rel_tol = g.positive("fd_rel_tol", s.fd_rel_tol);
    if (g.has("unroll_T")) {
      s.unroll_T = g.integers("unroll_T");
      for (long t : s.unroll_T)
        if (t < 1) Node::fail(g.key_path("unroll_T"), "entries must be positive");
    }
    g.finish();
  }

  if (root.has("sweep")) {
    Node s = root.child("sweep");
    if (s.has("beta0")) {
      cfg.sweep.beta0 = s.numbers("beta0");
    } else {
      Node r = s.child("range");
      const double lo = r.number("lo"), hi = r.number("hi");
      const long count = r.positive_integer("count", 11);
      if (lo > hi) Node::fail(r.key_path("lo"), "must not exceed hi");
      for (long k = 0; k < count; ++k)
        cfg.sweep.beta0.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / (count - 1));
      r.finish();
    }
    if (cfg.sweep.beta0.empty()) Node::fail(s.key_path("beta0"), "must not be empty");
    s.finish();
  }

  if (root.has("output")) {
    Node o = root.child("output");
    cfg.output.dir = o.string("dir", "out");
    cfg.output.snapshot_every = o.integer("snapshot_every", 0);
    if (cfg.output.snapshot_every < 0) Node::fail(o.key_path("snapshot_every"), "must be nonnegative");
    o.finish();
  }
  cfg.output.dir = resolve(base, cfg.output.dir);

  root.finish();

  if (cfg.forward.kernel) {
    try {
      check_fits(*cfg.forward.kernel, cfg.grid);
    } catch (const DimensionError& e) {
      Node::fail("forward_model.kernel", e.what());
    }
  }
  if (static_cast<int>(cfg.init.extents.size()) != cfg.grid.rank())
    Node::fail("init.extents", "filter rank differs from the grid rank");
  if (init_taps) {
    std::size_t taps = 1;
    for (int e : cfg.init.extents) taps *= static_cast<std::size_t>(e);
    cfg.init.filters.emplace();
    for (const auto& t : *init_taps) {
      if (t.size() != taps) Node::fail("init.taps", "tap count differs from the product of init.extents");
      cfg.init.filters->emplace_back(cfg.init.extents, t);
    }
  }
  return cfg;
}

}  // namespace

ExperimentConfig parse_config(std::string_view json_text) { return parse_impl(json_text, {}); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return parse_impl(text, path.parent_path());
}

ForwardModel build_forward_model(const ExperimentConfig& cfg) {
  if (cfg.forward.kind == "mask") {
    Rng rng(Rng::derive(cfg.seed, kMaskStream));
    Signal m(cfg.grid);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < cfg.forward.keep_fraction ? 1.0 : 0.0;
    return ForwardModel::mask(std::move(m));
  }
  if (cfg.forward.kind == "circulant") return ForwardModel::circulant(*cfg.forward.kernel, cfg.grid);
  return ForwardModel::identity(cfg.grid);
}

std::string sample_file_name(const char* stem, std::size_t j) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04zu.sig", stem, j);
  return buf;
}

TrainSet build_dataset(const DataSpec& spec, const ForwardModel& A) {
  if (!spec.dir) return make_dataset(spec.dataset, A);
  std::vector<Sample> samples;
  for (std::size_t j = 0;; ++j) {
    const auto xp = *spec.dir / sample_file_name("x_true", j);
    if (!std::filesystem::exists(xp)) break;
    Signal x = read_signal(xp);
    Signal y = read_signal(*spec.dir / sample_file_name("y", j));
    samples.push_back({std::move(x), std::move(y)});
  }
  if (samples.empty())
    throw ConfigError("no samples (x_true_0000.sig) found in '" + spec.dir->string() + "'");
  return TrainSet(A, std::move(samples));
}

HyperParams build_initial_params(const ExperimentConfig& cfg, const TrainSet& train) {
  if (!cfg.init_params_file) return initialize_params(cfg.init, train);
  HyperParams hp = read_params(*cfg.init_params_file);
  hp.learn = cfg.init.learn;
  hp.validate(train.grid());
  return hp;
}

GDConfig lower_solver(const ExperimentConfig& cfg) {
  GDConfig g;
  g.step = cfg.lower.step;
  g.max_iters = cfg.lower.max_iters;
  g.grad_tol = cfg.lower.tol ? *cfg.lower.tol : 1e-6 * std::sqrt(static_cast<double>(cfg.grid.size()));
  return g;
}

}  // namespace bilevel
