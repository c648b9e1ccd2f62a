#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tcan::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kNumericAbort = 3 };

// Runs one CLI invocation. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace tcan::cli
