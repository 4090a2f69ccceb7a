#pragma once

// Command-line front end: generate | train | sweep | report | evaluate.

#include <iosfwd>

namespace invalign {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;      // bad flags, config or I/O
inline constexpr int kExitNumerical = 2;  // a run diverged

/// Parses argv and runs one subcommand. Progress and tables go to `out`,
/// diagnostics to `err`. Returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace invalign
