// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace matdiff {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitIo = 1,
    kExitUsage = 2,
    kExitStageOrder = 3,
    kExitIntegrity = 4,
};

/// Runs one subcommand (gen-data, train, infer, eval, variance, timing, ablate) and returns its
/// exit code. Messages go to `out` and errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace matdiff
