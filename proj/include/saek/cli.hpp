#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace saek {

/// Exit codes: 0 success, 1 validation, 2 numeric failure, 3 I/O.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace saek
