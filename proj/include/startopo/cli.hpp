#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace startopo {

// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitGradCheckFailed = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitDiverged = 4,
  kExitShape = 5,
  kExitInternal = 6,
};

/// Runs the startopo command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace startopo
