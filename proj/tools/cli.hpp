#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace boltzflow::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 bad configuration or usage. Failures write one JSON line
/// to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace boltzflow::cli
