#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mlbviz::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Runs one command line (without the program name). Everything the command
// prints goes to out/err, so tests can drive it in-process.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlbviz::cli
