#include "bilevel/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "bilevel/errors.hpp"

namespace bilevel {

namespace {

using nlohmann::json;

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  // Reads one '\n'-terminated line.
  std::string_view line(const char* what) {
    const std::size_t end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) throw FormatError(std::string("truncated header: missing ") + what, pos_);
    const std::string_view out = bytes_.substr(pos_, end - pos_);
    line_start_ = pos_;
    pos_ = end + 1;
    return out;
  }

  // "<key> <int> [<int> ...]" with the expected key.
  std::vector<long> fields(const char* key) {
    const std::string_view l = line(key);
    const std::string k(key);
    if (l.substr(0, k.size() + 1) != k + " ") throw FormatError("expected '" + k + "' line", line_start_);
    std::vector<long> out;
    std::istringstream in{std::string(l.substr(k.size() + 1))};
    std::string tok;
    while (in >> tok) {
      std::size_t used = 0;
      long v = 0;
      try {
        v = std::stol(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw FormatError("bad integer '" + tok + "' in '" + k + "' line", line_start_);
      out.push_back(v);
    }
    return out;
  }

  std::size_t line_start() const { return line_start_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 7; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(p[b]);
  return std::bit_cast<double>(bits);
}

[[noreturn]] void params_error(const std::string& what) { throw FormatError("params file: " + what, 0); }

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) params_error(std::string("missing field '") + key + "'");
  return j.at(key);
}

double get_number(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number()) params_error(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

bool get_bool(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_boolean()) params_error(std::string("field '") + key + "' must be a boolean");
  return v.get<bool>();
}

std::vector<double> get_numbers(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_array()) params_error(std::string("field '") + key + "' must be an array");
  std::vector<double> out;
  for (const json& e : v) {
    if (!e.is_number()) params_error(std::string("field '") + key + "' must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

void check_allowed(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : keys) ok = ok || k == a;
    if (!ok) params_error("unknown field '" + k + "' in " + where);
  }
}

}  // namespace

std::string encode_signal(const Signal& s) {
  std::string out = std::string(kSignalMagic) + "\nrank " + std::to_string(s.grid().rank()) + "\nextents";
  for (int e : s.grid().extents()) out += " " + std::to_string(e);
  out += "\ncount " + std::to_string(s.size()) + "\n";
  out.reserve(out.size() + 8 * s.size());
  for (double v : s.values()) put_le(out, v);
  return out;
}

Signal decode_signal(std::string_view bytes) {
  HeaderReader h(bytes);
  if (h.line("magic") != kSignalMagic) throw FormatError("not a signal file (bad magic)", 0);
  const std::vector<long> rank = h.fields("rank");
  if (rank.size() != 1 || rank[0] < 1 || rank[0] > 2) throw FormatError("rank must be 1 or 2", h.line_start());
  const std::vector<long> ext = h.fields("extents");
  if (static_cast<long>(ext.size()) != rank[0]) throw FormatError("extent count does not match rank", h.line_start());
  std::vector<int> extents;
  std::size_t n = 1;
  for (long e : ext) {
    if (e < 1 || e > (1L << 30)) throw FormatError("extents must be positive", h.line_start());
    extents.push_back(static_cast<int>(e));
    n *= static_cast<std::size_t>(e);
  }
  const std::vector<long> count = h.fields("count");
  if (count.size() != 1 || count[0] < 0 || static_cast<std::size_t>(count[0]) != n)
    throw FormatError("element count does not match the extents", h.line_start());
  const std::size_t data = h.offset();
  if (bytes.size() < data + 8 * n) throw FormatError("truncated payload", bytes.size());
  if (bytes.size() > data + 8 * n) throw FormatError("trailing bytes after payload", data + 8 * n);
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = get_le(bytes.data() + data + 8 * i);
  return Signal(Grid(std::move(extents)), std::move(values));
}

void write_signal(const std::filesystem::path& path, const Signal& s) { write_file(path, encode_signal(s)); }

Signal read_signal(const std::filesystem::path& path) {
  try {
    return decode_signal(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

std::string encode_params(const HyperParams& hp) {
  const auto finite = [](double v) {
    if (!std::isfinite(v)) throw ConfigError("cannot serialize a non-finite hyperparameter");
    return v;
  };
  json j;
  j["schema"] = kParamsSchema;
  j["version"] = kParamsVersion;
  j["layout"] = ThetaLayout::kTag;
  json pot;
  pot["kind"] = hp.potential.kind == Potential::Kind::Quadratic ? "quadratic" : "corner_rounded";
  if (hp.potential.kind == Potential::Kind::CornerRounded1Norm) pot["eps"] = finite(hp.potential.eps);
  j["potential"] = pot;
  j["beta0"] = finite(hp.beta0);
  json betas = json::array();
  for (double b : hp.betas) betas.push_back(finite(b));
  j["betas"] = betas;
  j["learn"] = {{"beta0", hp.learn.beta0}, {"betas", hp.learn.betas}, {"filters", hp.learn.filters}};
  json filters = json::array();
  for (const Filter& f : hp.filters) {
    json taps = json::array();
    for (double t : f.taps()) taps.push_back(finite(t));
    filters.push_back({{"extents", f.extents()}, {"taps", taps}});
  }
  j["filters"] = filters;
  return j.dump(2) + "\n";
}

HyperParams decode_params(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("params file is not valid JSON: ") + e.what(), e.byte);
  }
  if (!j.is_object()) params_error("top level must be an object");
  const json& schema = field(j, "schema");
  if (!schema.is_string() || schema.get<std::string>() != kParamsSchema) params_error("schema is not 'blvl-params'");
  const json& version = field(j, "version");
  if (!version.is_number_integer()) params_error("version must be an integer");
  const long v = version.get<long>();
  if (v > kParamsVersion)
    params_error("schema version " + std::to_string(v) + " is newer than the supported version " +
                 std::to_string(kParamsVersion));
  if (v < 1) params_error("unsupported schema version " + std::to_string(v));
  const json& layout = field(j, "layout");
  if (!layout.is_string() || layout.get<std::string>() != ThetaLayout::kTag) params_error("unknown theta layout");
  check_allowed(j, {"schema", "version", "layout", "potential", "beta0", "betas", "learn", "filters"}, "params");

  HyperParams hp;
  const json& pot = field(j, "potential");
  const json& kind = field(pot, "kind");
  if (kind == "quadratic") {
    check_allowed(pot, {"kind"}, "potential");
    hp.potential = Potential::quadratic();
  } else if (kind == "corner_rounded") {
    check_allowed(pot, {"kind", "eps"}, "potential");
    const double eps = get_number(pot, "eps");
    if (!(eps > 0.0)) params_error("potential eps must be positive");
    hp.potential = Potential::corner_rounded(eps);
  } else {
    params_error("unknown potential kind");
  }
  hp.beta0 = get_number(j, "beta0");
  hp.betas = get_numbers(j, "betas");
  const json& learn = field(j, "learn");
  check_allowed(learn, {"beta0", "betas", "filters"}, "learn");
  hp.learn = {get_bool(learn, "beta0"), get_bool(learn, "betas"), get_bool(learn, "filters")};
  const json& filters = field(j, "filters");
  if (!filters.is_array()) params_error("filters must be an array");
  for (const json& f : filters) {
    check_allowed(f, {"extents", "taps"}, "filter");
    std::vector<int> extents;
    for (double e : get_numbers(f, "extents")) {
      if (e < 1 || e != std::floor(e)) params_error("filter extents must be positive integers");
      extents.push_back(static_cast<int>(e));
    }
    try {
      hp.filters.emplace_back(std::move(extents), get_numbers(f, "taps"));
    } catch (const DimensionError& e) {
      params_error(e.what());
    }
  }
  if (hp.betas.size() != hp.filters.size()) params_error("betas and filters differ in length");
  return hp;
}

void write_params(const std::filesystem::path& path, const HyperParams& hp) { write_file(path, encode_params(hp)); }

HyperParams read_params(const std::filesystem::path& path) {
  try {
    return decode_params(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_trace_csv(std::ostream& out, const OptTrace& trace) {
  out << "iteration,loss,grad_norm,lower_iters,step_upper,step_lower,wall_ms\n";
  for (const TraceRecord& r : trace.records)
    out << r.iteration << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm) << ',' << r.lower_iters
        << ',' << format_double(r.step_upper) << ',' << format_double(r.step_lower) << ','
        << format_double(r.wall_ms) << '\n';
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace bilevel
