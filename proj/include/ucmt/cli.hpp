#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ucmt::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDivergence = 3, kIo = 4 };

// Runs the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ucmt::cli
