#pragma once

#include <string>
#include <vector>

namespace mfbsde {

// Exit codes: 0 success, 2 config/usage error, 3 validation failure,
// 4 capacity error.
int run_cli(const std::vector<std::string>& args);

}  // namespace mfbsde
