#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace consol {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitUsage = 2, kExitConfig = 3, kExitConsistency = 4 };

/// Entry point shared by the executable and the tests. Subcommands:
/// gen-data, search, fit, probe, eval.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace consol
