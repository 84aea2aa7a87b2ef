#pragma once

#include <string>
#include <vector>

namespace flowrom::cli {

// Exit codes: 0 success, 1 validation error, 2 runtime failure.
int run(const std::vector<std::string>& args);

}  // namespace flowrom::cli
