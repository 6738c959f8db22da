#pragma once

#include <iosfwd>

namespace ionmirror::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kRuntimeError = 2;

/// Command-line entry point: subcommands simulate, spectrum, lock,
/// experiment <alternating|pe-scan|spatial-scan>, predict; global flags
/// --config, --seed, --out-dir, --format.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ionmirror::cli
