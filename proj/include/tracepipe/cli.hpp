#pragma once

#include <iosfwd>

namespace tracepipe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
// The command finished but some items recorded backend errors.
inline constexpr int kExitPartial = 3;

// Entry point of the `tracepipe` tool. Writes results to `out` and
// diagnostics to `err`; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tracepipe
