#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cgrs {

// Parses `args` (program name excluded) and runs the selected command.
// Returns 0 on success, 2 for usage and configuration errors, 3 for data
// errors, 4 for numeric failures, 5 for I/O errors and 1 otherwise.
// `out` receives command results meant for people (report rows, the
// checkpoint index); progress and the resolved configuration go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cgrs
