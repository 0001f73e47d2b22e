#pragma once

#include <string>
#include <vector>

namespace srg::cli {

// Full command-line surface. argv includes the program name. Exit codes:
// 0 success, 2 usage, 3 config, 4 data, 5 numeric failure.
int dispatch(std::vector<std::string> argv);
int dispatch(int argc, const char* const* argv);

}  // namespace srg::cli
