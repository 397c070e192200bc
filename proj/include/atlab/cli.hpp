#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace atlab::cli {

// Runs one subcommand; args exclude the program name.
// Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace atlab::cli
