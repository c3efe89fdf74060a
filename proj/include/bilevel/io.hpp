#pragma once

// File formats: signal files (text header + little-endian float64 payload),
// params files (JSON) and optimizer trace CSV.

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>

#include "bilevel/lower_level.hpp"
#include "bilevel/signal.hpp"
#include "bilevel/upper_opt.hpp"

namespace bilevel {

// Signal file:
//   BLVL-SIG v1\n
//   rank <r>\n
//   extents <e1> [<e2>]\n
//   count <N>\n
// followed by exactly N little-endian IEEE-754 doubles in grid-major order.
inline constexpr const char* kSignalMagic = "BLVL-SIG v1";

std::string encode_signal(const Signal& s);
// Throws FormatError with the byte offset of the first problem.
Signal decode_signal(std::string_view bytes);
void write_signal(const std::filesystem::path& path, const Signal& s);
Signal read_signal(const std::filesystem::path& path);

// Params file: JSON object
//   {"schema": "blvl-params", "version": 1, "layout": "theta-v1",
//    "potential": {"kind": "corner_rounded" | "quadratic", "eps": e},
//    "beta0": b0, "betas": [...], "learn": {"beta0": bool, "betas": bool, "filters": bool},
//    "filters": [{"extents": [...], "taps": [...]}, ...]}
// Doubles are written with the shortest decimal form that reads back to the same bits.
inline constexpr const char* kParamsSchema = "blvl-params";
inline constexpr int kParamsVersion = 1;

std::string encode_params(const HyperParams& hp);
// Rejects other schemas, newer versions and malformed fields with FormatError.
HyperParams decode_params(std::string_view text);
void write_params(const std::filesystem::path& path, const HyperParams& hp);
HyperParams read_params(const std::filesystem::path& path);

// Trace CSV columns: iteration,loss,grad_norm,lower_iters,step_upper,step_lower,wall_ms.
// wall_ms is last so that it can be stripped before comparing runs.
void write_trace_csv(std::ostream& out, const OptTrace& trace);

// %.17g formatting used by every CSV writer.
std::string format_double(double v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace bilevel
