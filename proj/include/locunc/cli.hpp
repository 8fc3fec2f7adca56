#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace locunc {

/// Entry point of the `locunc` tool. `args` excludes the program name.
/// Returns 0 on success; on failure writes one diagnostic line to `err` and
/// returns 1 (runtime or data error) or 2 (usage error).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace locunc
