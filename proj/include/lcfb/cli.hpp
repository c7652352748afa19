#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lcfb {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitInput = 2,
  kExitInsufficientData = 3,
  kExitEnvironment = 4,
};

// Runs the lcfb command line. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lcfb
