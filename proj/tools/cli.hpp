#pragma once

#include <ostream>

namespace bilevel {

// Exit codes: 0 success, 1 runtime or configuration failure, 2 usage error.
// Failures print one line "error: <kind>: <message>" to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bilevel
