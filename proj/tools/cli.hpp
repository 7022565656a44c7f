#pragma once

#include <iosfwd>

namespace admrl::cli {

enum ExitCode : int { kOk = 0, kInputError = 1, kChecksFailed = 2 };

/// Environment variable naming the default root for output directories.
inline constexpr const char* kOutputRootEnv = "ADMRL_OUTPUT_ROOT";

/// Entry point of the `admrl` tool. Commands: run, eval, gradcheck, oracle,
/// plot. Output goes to `out`, diagnostics to `err`.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace admrl::cli
