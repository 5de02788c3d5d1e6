#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace civkit::cli {

/// Exit codes of the civkit command line.
enum ExitCode : int {
  kSuccess = 0,
  kUsage = 2,
  kDataFailure = 3,
  kNumericalFailure = 4,
};

/// Runs the command line on args (args[0] is the program name). Reports go
/// to `out` unless --out is given; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace civkit::cli
