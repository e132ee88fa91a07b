#pragma once

#include <ostream>
#include <span>
#include <string>

namespace mixseq {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs one `mixseq` invocation; args[0] is the program name. Configuration
// precedence: defaults, --config file, MIXSEQ_* environment, flags.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace mixseq
