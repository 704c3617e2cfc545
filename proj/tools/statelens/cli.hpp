// Command-line front end: learn, learn-bb, compare and explain.
#pragma once

#include <ostream>

namespace statelens::cli {

// Exit codes: 0 clean, 2 time-bound or query-cap exit, 1 error or usage.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace statelens::cli
