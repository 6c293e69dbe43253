#pragma once

#include <string>
#include <vector>

namespace dru {

// Command-line entry point (preprocess / train / predict / evaluate).
// Exit codes: 0 success, 1 user/config error, 2 data error, 3 internal error.
int cli_main(const std::vector<std::string>& args);

}  // namespace dru
