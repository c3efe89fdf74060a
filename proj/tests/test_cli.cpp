#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "bilevel/io.hpp"
#include "cli.hpp"
#include "doctest.h"

using namespace bilevel;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "blvl");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const std::string kToy = std::string(BLVL_SOURCE_DIR) + "/configs/toy.json";

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "blvl_test_cli" / name;
  fs::remove_all(d);
  return d;
}

// Drops the last CSV column (wall_ms).
std::string without_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

std::vector<std::string> lines(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string write_config(const std::string& name, const std::string& text) {
  const fs::path p = fresh_dir(name) / "cfg.json";
  write_file(p, text);
  return p.string();
}

}  // namespace

TEST_CASE("train on the toy config writes params and trace") {
  const fs::path dir = fresh_dir("train");
  const Run r = run({"train", "--config", kToy, "--out", dir.string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "params.json"));
  CHECK(fs::exists(dir / "trace.csv"));
  CHECK_NOTHROW(read_params(dir / "params.json"));
  const auto trace = lines(read_file(dir / "trace.csv"));
  REQUIRE(trace.size() > 1);
  CHECK(trace[0] == "iteration,loss,grad_norm,lower_iters,step_upper,step_lower,wall_ms");
}

TEST_CASE("identical config and seed give identical outputs") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  REQUIRE(run({"train", "-c", kToy, "-o", a.string()}).code == 0);
  REQUIRE(run({"train", "-c", kToy, "-o", b.string()}).code == 0);
  CHECK(read_file(a / "params.json") == read_file(b / "params.json"));
  CHECK(without_last_column(read_file(a / "trace.csv")) == without_last_column(read_file(b / "trace.csv")));

  REQUIRE(run({"gen-data", "-c", kToy, "-o", a.string()}).code == 0);
  REQUIRE(run({"gen-data", "-c", kToy, "-o", b.string()}).code == 0);
  for (const char* f : {"manifest.json", "train/x_true_0000.sig", "train/y_0003.sig", "test/y_0001.sig"})
    CHECK(read_file(a / f) == read_file(b / f));
}

TEST_CASE("gradcheck reports a monotone angle column") {
  const fs::path dir = fresh_dir("gradcheck");
  const Run r = run({"gradcheck", "-c", kToy, "-o", dir.string()});
  INFO(r.out << r.err);
  CHECK(r.code == 0);
  const auto csv = lines(read_file(dir / "gradcheck_angles.csv"));
  REQUIRE(csv.size() == 5);
  CHECK(csv[0] == "tolerance,angle_deg,rel_err,lower_iters,monotone");
  for (std::size_t i = 1; i < csv.size(); ++i) CHECK(csv[i].substr(csv[i].rfind(',') + 1) == "1");
  const std::string report = read_file(dir / "gradcheck_report.txt");
  CHECK(report.find("FAIL") == std::string::npos);
  CHECK(report.find("PASS tolerance_sweep") != std::string::npos);
}

TEST_CASE("unknown subcommand exits 2 with usage") {
  const Run r = run({"frobnicate"});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: usage: unknown subcommand 'frobnicate'", 0) == 0);
  CHECK(r.err.find("Usage:") != std::string::npos);
  CHECK(run({}).code == 2);
  CHECK(run({"train"}).code == 2);
}

TEST_CASE("bad config key exits 1 naming the key") {
  const std::string cfg = write_config("badkey", R"({"seed": 1, "optimizer": {"kind": "hoag", "stepsize": 1}})");
  const Run r = run({"train", "-c", cfg});
  CHECK(r.code == 1);
  CHECK(r.err == "error: config: config key 'optimizer.stepsize': unknown or unused key\n");
}

TEST_CASE("runtime failures print one error line") {
  const Run missing = run({"train", "-c", "/nonexistent/cfg.json"});
  CHECK(missing.code == 1);
  CHECK(lines(missing.err).size() == 1);
  CHECK(missing.err.rfind("error: config: ", 0) == 0);

  const fs::path dir = fresh_dir("corrupt");
  write_file(dir / "bad.sig", "BLVL-SIG v2\n");
  const Run bad = run({"eval", "-i", (dir / "bad.sig").string(), "-r", (dir / "bad.sig").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("error: format: ", 0) == 0);
  CHECK(bad.err.find("(at byte 0)") != std::string::npos);
}

TEST_CASE("generated data feeds train, reconstruct and eval") {
  const fs::path dir = fresh_dir("pipeline");
  REQUIRE(run({"gen-data", "-c", kToy, "-o", (dir / "data").string()}).code == 0);
  const std::string cfg = write_config("pipeline_cfg", R"({
    "seed": 7,
    "grid": {"extents": [32]},
    "potential": {"kind": "corner_rounded", "eps": 0.1},
    "optimizer": {"kind": "adam", "step": 0.05, "max_upper": 5},
    "data": {"train": {"dir": ")" + (dir / "data" / "train").string() + R"("},
             "test": {"dir": ")" + (dir / "data" / "test").string() + R"("}}
  })");
  const Run t = run({"train", "-c", cfg, "-o", (dir / "run").string()});
  INFO(t.err);
  REQUIRE(t.code == 0);
  const std::string params = (dir / "run" / "params.json").string();
  const Run rec = run({"reconstruct", "-p", params, "-i", (dir / "data" / "test" / "y_0000.sig").string(), "--output",
                       (dir / "xhat.sig").string(), "-c", cfg});
  INFO(rec.err);
  REQUIRE(rec.code == 0);
  const Run ev = run({"eval", "-i", (dir / "xhat.sig").string(), "-r",
                      (dir / "data" / "test" / "x_true_0000.sig").string()});
  REQUIRE(ev.code == 0);
  CHECK(lines(ev.out).size() == 2);
  const Run set = run({"eval", "-c", cfg, "-p", params});
  REQUIRE(set.code == 0);
  const auto rows = lines(set.out);
  REQUIRE(rows.size() == 6);
  CHECK(rows.back().rfind("median,", 0) == 0);
  // Same reconstruction through both routes.
  CHECK(rows[1] == lines(ev.out)[1]);
}

TEST_CASE("sweep writes a table with one best row") {
  const fs::path dir = fresh_dir("sweep");
  const Run r = run({"sweep", "-c", kToy, "-o", dir.string()});
  REQUIRE(r.code == 0);
  const auto rows = lines(read_file(dir / "sweep.csv"));
  REQUIRE(rows.size() == 12);
  int best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) best += rows[i].back() == '1';
  CHECK(best == 1);
}
