#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace xfer::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Runs the command line `args` (args[0] is the program name).
/// Returns 0 on success, 2 on usage errors, 1 on module errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xfer::cli
