#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gfm::cli {

inline constexpr const char* kOutputRootEnv = "GFM_OUTPUT_ROOT";

// Exit status: 0 success, 1 runtime failure, 2 unknown verb / bad arguments /
// configuration error. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gfm::cli
