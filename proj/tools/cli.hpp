#pragma once

#include <string>
#include <vector>

namespace pcet::cli {

/// Environment variable consulted when `--data` is not given.
inline constexpr const char* kDataRootEnv = "PCET_DATA_ROOT";

/// Runs the `pcet` command line. Returns the process exit code:
/// 0 success, 2 configuration error, 3 data/format error, 4 numeric error.
int run(const std::vector<std::string>& args);

}  // namespace pcet::cli
