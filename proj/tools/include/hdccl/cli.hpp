#pragma once

// Command-line front end: gen-data, train, grad-check, eval, ablate, heatmap.

#include <ostream>
#include <string>
#include <vector>

namespace hdccl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace hdccl::cli
