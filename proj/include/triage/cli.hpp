#pragma once

#include <string_view>

namespace triage {

inline constexpr std::string_view kToolVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitFailure = 3 };

/// Entry point for the `triage` tool. Output goes to stdout, diagnostics to
/// stderr.
int run_cli(int argc, const char* const* argv);

}  // namespace triage
