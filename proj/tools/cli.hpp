#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mammut::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kFailure = 2 };

/// Runs the `mammut` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mammut::cli
