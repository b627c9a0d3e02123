#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crossview::cli {

/// Exit codes: 0 success, 1 validation/configuration error, 2 upstream failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crossview::cli
