#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "bilevel/config.hpp"
#include "bilevel/data.hpp"
#include "bilevel/errors.hpp"
#include "bilevel/io.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace bilevel;
using namespace testing_support;

namespace {

int count_jumps(const Signal& x) {
  int n = 0;
  for (std::size_t i = 1; i < x.size(); ++i) n += x[i] != x[i - 1] ? 1 : 0;
  return n;
}

bool same_bits(const Signal& a, const Signal& b) {
  if (!(a.grid() == b.grid())) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "blvl_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

HyperParams sample_params() {
  Rng rng(5);
  HyperParams hp;
  hp.beta0 = -1.2345678901234567;
  hp.betas = {0.1, -3.0e-300};
  hp.filters = {random_filter({2}, rng), random_filter({3}, rng)};
  hp.potential = Potential::corner_rounded(0.0123);
  hp.learn = {true, false, true};
  return hp;
}

}  // namespace

TEST_CASE("no jumps gives a constant signal") {
  const Signal x = gen_piecewise_constant(Grid::line(50), 0, -1.0, 1.0, 3);
  CHECK(count_jumps(x) == 0);
}

TEST_CASE("1-D generator has exactly n_jumps level changes") {
  for (int jumps : {1, 4, 10, 49}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Signal x = gen_piecewise_constant(Grid::line(50), jumps, -1.0, 1.0, seed);
      CHECK(count_jumps(x) == jumps);
    }
  }
}

TEST_CASE("generator is deterministic per seed") {
  const Signal a = gen_piecewise_constant(Grid::line(64), 5, 0.0, 2.0, 11);
  const Signal b = gen_piecewise_constant(Grid::line(64), 5, 0.0, 2.0, 11);
  const Signal c = gen_piecewise_constant(Grid::line(64), 5, 0.0, 2.0, 12);
  CHECK(same_bits(a, b));
  CHECK_FALSE(same_bits(a, c));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] >= 0.0);
    CHECK(a[i] < 2.0);
  }
}

TEST_CASE("2-D generator produces axis-aligned blocks") {
  const Grid g = Grid::plane(12, 16);
  const Signal x = gen_piecewise_constant(g, 5, -1.0, 1.0, 4);
  // 2 row cuts and 3 column cuts: every row equals its upper neighbour except at a
  // row cut, and likewise for columns.
  int row_changes = 0, col_changes = 0;
  for (int r = 1; r < 12; ++r) {
    bool differs = false;
    for (int c = 0; c < 16; ++c) differs = differs || x[r * 16 + c] != x[(r - 1) * 16 + c];
    row_changes += differs;
  }
  for (int c = 1; c < 16; ++c) {
    bool differs = false;
    for (int r = 0; r < 12; ++r) differs = differs || x[r * 16 + c] != x[r * 16 + c - 1];
    col_changes += differs;
  }
  CHECK(row_changes <= 2);
  CHECK(col_changes <= 3);
  CHECK(row_changes + col_changes >= 1);
}

TEST_CASE("too many jumps is a configuration error") {
  CHECK_THROWS_AS(gen_piecewise_constant(Grid::line(8), 8, -1.0, 1.0, 0), ConfigError);
}

TEST_CASE("zero noise gives y = A x exactly") {
  Rng rng(2);
  const Grid g = Grid::line(20);
  const Signal x = random_signal(g, rng);
  const ForwardModel A = ForwardModel::circulant(Filter::line({0.5, 0.25}), g);
  CHECK(same_bits(add_noise(x, A, 0.0, 9), A.apply(x)));
}

TEST_CASE("noise sample standard deviation is within 2% of sigma") {
  const Grid g = Grid::line(100000);
  const Signal x(g);
  const ForwardModel A = ForwardModel::identity(g);
  for (double sigma : {0.05, 1.0, 3.0}) {
    const Signal y = add_noise(x, A, sigma, 21);
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) mean += y[i];
    mean /= static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) sq += (y[i] - mean) * (y[i] - mean);
    const double sd = std::sqrt(sq / static_cast<double>(y.size() - 1));
    CHECK(std::abs(sd / sigma - 1.0) <= 0.02);
  }
}

TEST_CASE("noise is deterministic per seed") {
  const Grid g = Grid::line(30);
  const Signal x(g);
  const ForwardModel A = ForwardModel::identity(g);
  CHECK(same_bits(add_noise(x, A, 0.1, 4), add_noise(x, A, 0.1, 4)));
  CHECK_FALSE(same_bits(add_noise(x, A, 0.1, 4), add_noise(x, A, 0.1, 5)));
}

TEST_CASE("extra realizations reuse the image with fresh noise") {
  DatasetSpec s;
  s.count = 3;
  s.realizations = 2;
  s.seed = 8;
  const TrainSet t = make_dataset(s, ForwardModel::identity(Grid::line(16)));
  REQUIRE(t.size() == 6);
  CHECK(same_bits(t.samples()[0].x_true, t.samples()[1].x_true));
  CHECK_FALSE(same_bits(t.samples()[0].y, t.samples()[1].y));
  CHECK_FALSE(same_bits(t.samples()[0].x_true, t.samples()[2].x_true));
}

TEST_CASE("signal round-trip is bit exact") {
  Rng rng(3);
  for (const Grid& g : {Grid::line(17), Grid::plane(5, 7)}) {
    Signal s = random_signal(g, rng);
    s[0] = -0.0;
    s[1] = std::numeric_limits<double>::denorm_min();
    s[2] = std::numeric_limits<double>::infinity();
    const auto path = scratch("rt.sig");
    write_signal(path, s);
    CHECK(same_bits(read_signal(path), s));
  }
}

TEST_CASE("signal header layout") {
  const Signal s(Grid::plane(2, 3), {1, 2, 3, 4, 5, 6});
  const std::string bytes = encode_signal(s);
  const std::string header = "BLVL-SIG v1\nrank 2\nextents 2 3\ncount 6\n";
  REQUIRE(bytes.size() == header.size() + 48);
  CHECK(bytes.substr(0, header.size()) == header);
  // 1.0 little-endian: 00 00 00 00 00 00 f0 3f
  CHECK(static_cast<unsigned char>(bytes[header.size() + 6]) == 0xf0);
  CHECK(static_cast<unsigned char>(bytes[header.size() + 7]) == 0x3f);
}

TEST_CASE("corrupted signal files are format errors with offsets") {
  const std::string good = encode_signal(Signal(Grid::line(3), {1, 2, 3}));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_signal(bad_magic), FormatError);
  try {
    decode_signal(good.substr(0, good.size() - 4));
    FAIL("truncated payload accepted");
  } catch (const FormatError& e) {
    CHECK(e.offset() == good.size() - 4);
  }
  try {
    decode_signal(good + "x");
    FAIL("trailing byte accepted");
  } catch (const FormatError& e) {
    CHECK(e.offset() == good.size());
  }
  std::string bad_count = good;
  bad_count.replace(bad_count.find("count 3"), 7, "count 4");
  CHECK_THROWS_AS(decode_signal(bad_count), FormatError);
}

TEST_CASE("params round-trip is exact") {
  const HyperParams hp = sample_params();
  const auto path = scratch("p.json");
  write_params(path, hp);
  CHECK(read_params(path) == hp);
  CHECK(encode_params(read_params(path)) == encode_params(hp));
}

TEST_CASE("params from a newer schema version are rejected") {
  std::string text = encode_params(sample_params());
  text.replace(text.find("\"version\": 1"), 12, "\"version\": 2");
  try {
    decode_params(text);
    FAIL("newer version accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("newer") != std::string::npos);
  }
}

TEST_CASE("params with unknown fields or another schema are rejected") {
  const std::string text = encode_params(sample_params());
  std::string extra = text;
  extra.insert(1, "\"extra\": 1,");
  CHECK_THROWS_AS(decode_params(extra), FormatError);
  std::string other = text;
  other.replace(other.find("blvl-params"), 11, "other-thing");
  CHECK_THROWS_AS(decode_params(other), FormatError);
  CHECK_THROWS_AS(decode_params("{not json"), FormatError);
}

TEST_CASE("config requires a seed") {
  CHECK_THROWS_AS(parse_config("{}"), ConfigError);
  CHECK_NOTHROW(parse_config(R"({"seed": 1})"));
}

TEST_CASE("unknown config keys are rejected by path") {
  const auto message = [](const char* text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("accepted");
  };
  CHECK(message(R"({"seed": 1, "colour": 2})").find("'colour'") != std::string::npos);
  CHECK(message(R"({"seed": 1, "lower": {"tol": 1e-6, "tolerance": 1}})").find("'lower.tolerance'") !=
        std::string::npos);
  CHECK(message(R"({"seed": 1, "optimizer": {"kind": "hoag", "step": {"rule": "constant", "alpha0": 1}}})")
            .find("'optimizer.step.alpha0'") != std::string::npos);
  // Keys of another optimizer are not consumed.
  CHECK(message(R"({"seed": 1, "optimizer": {"kind": "hoag", "inner_iters": 3}})").find("'optimizer.inner_iters'") !=
        std::string::npos);
  CHECK(message(R"({"seed": 1, "potential": {"kind": "quadratic", "eps": 0.1}})").find("'potential.eps'") !=
        std::string::npos);
}

TEST_CASE("config type errors name the key") {
  try {
    parse_config(R"({"seed": 1, "data": {"train": {"count": "many"}}})");
    FAIL("accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("'data.train.count'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(R"({"seed": -1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": 1, "lower": {"max_iters": 2.5}})"), ConfigError);
}

TEST_CASE("train and test generator seeds must differ") {
  CHECK_THROWS_AS(parse_config(R"({"seed": 1, "data": {"train": {"seed": 4}, "test": {"seed": 4}}})"), ConfigError);
  const ExperimentConfig cfg = parse_config(R"({"seed": 1})");
  CHECK(cfg.train.dataset.seed != cfg.test.dataset.seed);
}

TEST_CASE("config fills optimizer settings") {
  const ExperimentConfig cfg = parse_config(R"({
    "seed": 3, "threads": 2,
    "grid": {"extents": [16]},
    "lower": {"max_iters": 500},
    "optimizer": {"kind": "ba", "step": 0.5, "lower_step": "two_over_L_plus_mu", "inner_iters": 7,
                  "inner_growth": "linear", "box": {"lo": [-1], "hi": [1]}}
  })");
  CHECK(cfg.optimizer.kind == "ba");
  CHECK(cfg.optimizer.ba.step_upper == 0.5);
  CHECK(cfg.optimizer.ba.lower_rule == LowerStepRule::TwoOverLPlusMu);
  CHECK(cfg.optimizer.ba.inner_iters == 7);
  CHECK(cfg.optimizer.ba.inner_growth == InnerGrowth::Linear);
  CHECK(cfg.optimizer.ba.threads == 2);
  CHECK(cfg.lower.max_iters == 500);
  CHECK(lower_solver(cfg).grad_tol == doctest::Approx(4e-6));
}

TEST_CASE("explicit initial filters") {
  const ExperimentConfig cfg = parse_config(R"({
    "seed": 3, "grid": {"extents": [16]},
    "init": {"taps": [[1, -1]], "extents": [2], "beta0": -2, "betas": [0.5]}
  })");
  DatasetSpec s;
  s.count = 2;
  s.seed = 1;
  const TrainSet t = make_dataset(s, build_forward_model(cfg));
  const HyperParams hp = build_initial_params(cfg, t);
  REQUIRE(hp.filters.size() == 1);
  CHECK(hp.filters[0] == Filter::line({1, -1}));
  CHECK(hp.beta0 == -2.0);
  CHECK(hp.betas == std::vector<double>{0.5});
  CHECK_THROWS_AS(parse_config(R"({"seed": 3, "init": {"taps": [[1, -1, 0]], "extents": [2]}})"), ConfigError);
}

TEST_CASE("mask forward model keeps about the configured fraction") {
  const ExperimentConfig cfg =
      parse_config(R"({"seed": 9, "grid": {"extents": [2000]}, "forward_model": {"kind": "mask", "keep_fraction": 0.3}})");
  const ForwardModel A = build_forward_model(cfg);
  Signal ones(cfg.grid);
  for (std::size_t i = 0; i < ones.size(); ++i) ones[i] = 1.0;
  const Signal m = A.apply(ones);
  double kept = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) kept += m[i];
  CHECK(kept / 2000.0 == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("dataset directory round-trip") {
  DatasetSpec s;
  s.count = 3;
  s.seed = 6;
  const ForwardModel A = ForwardModel::identity(Grid::line(12));
  const TrainSet t = make_dataset(s, A);
  const auto dir = scratch("set");
  std::filesystem::remove_all(dir);
  for (std::size_t j = 0; j < t.size(); ++j) {
    write_signal(dir / sample_file_name("x_true", j), t.samples()[j].x_true);
    write_signal(dir / sample_file_name("y", j), t.samples()[j].y);
  }
  DataSpec d;
  d.dir = dir;
  const TrainSet back = build_dataset(d, A);
  REQUIRE(back.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) CHECK(same_bits(back.samples()[j].y, t.samples()[j].y));
}
