#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace camerapose::cli {

// Stable process exit codes.
enum ExitCode : int { kOk = 0, kIoError = 1, kConfigError = 2, kNumericAbort = 3 };

// Entry point shared by the executable and the tests. args[0] is the program
// name. Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace camerapose::cli
