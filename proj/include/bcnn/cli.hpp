#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bcnn {

/// Runs one subcommand (train, prune, quantize, infer, bench, export).
/// `args` excludes the program name. Returns 0 on success, 2 on usage
/// errors and 1 on runtime errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bcnn
