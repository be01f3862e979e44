#pragma once

#include <iosfwd>

namespace dfedpgp {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitRuntime = 3,
  kExitAssumption = 4,
};

/// Entry point of the `dfedpgp` command-line tool. Output goes to `out`,
/// diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dfedpgp
