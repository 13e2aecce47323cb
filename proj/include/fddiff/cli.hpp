// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace fddiff {

/// Exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitCheckFailed = 4,
};

/// Full command-line entry point. Subcommands: schedule, degrade, train,
/// sample, eval, oracle-check, synth. Failures print a single line
/// `error: <category>: <message>` to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fddiff
