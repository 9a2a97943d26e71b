#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace latinv {

/// Runs one `latinv` subcommand. `args` excludes the program name.
/// Returns 0 on success, 2 on argument errors, 1 on runtime errors.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace latinv
