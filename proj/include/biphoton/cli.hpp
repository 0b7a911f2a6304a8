#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace biphoton::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kNumericalFailure = 2,
};

/// Runs the command line (args exclude the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace biphoton::cli
