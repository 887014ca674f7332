#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gradreg {

/// Subcommands: phantom, gradmap, train, register, eval. `args` excludes the
/// program name. Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gradreg
