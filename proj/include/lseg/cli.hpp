#pragma once

#include <string>
#include <vector>

namespace lseg::cli {

// Entry point shared by the binary and the tests. args excludes the program
// name. Returns the process exit code.
int run(const std::vector<std::string>& args);

}  // namespace lseg::cli
