#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace eltex::cli {

/// Parses `args` (without the program name) and runs the subcommand.
/// Returns the process exit code: 0 success, 2 usage, 3 invalid input,
/// 4 missing resource, 5 backend failure, 1 anything else.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eltex::cli
