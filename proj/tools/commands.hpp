#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace modwatch::cli {

// Runs one `modwatch` invocation (args exclude the program name) and returns
// its exit code: 0 ok, 2 config, 3 numeric, 4 data, 5 shape.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace modwatch::cli
