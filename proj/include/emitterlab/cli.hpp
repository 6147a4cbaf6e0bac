#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace emitterlab::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kSuccess = 0,
  kNotConverged = 1,
  kInputError = 2,
};

/// Runs one subcommand. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace emitterlab::cli
