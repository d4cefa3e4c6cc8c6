#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace atmc {

/// Runs the command line `args` (args[0] is the program name). Returns the
/// exit code; failures print one line "atmc: error: <reason>" to `err`.
/// 0 success, 1 runtime failure, 2 invalid flags.
int cli_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace atmc
