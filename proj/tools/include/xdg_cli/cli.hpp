#pragma once

#include <string>
#include <vector>

namespace xdg::cli {

enum ExitCode : int { ok = 0, runtime_abort = 1, usage_error = 2, missing_artifact = 3 };

/// Runs one command line (program name excluded) and returns the process exit code.
int run(const std::vector<std::string>& args);

}  // namespace xdg::cli
