#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace softtwin::cli {

// Exit codes shared by all subcommands.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kBadInput = 2,         // malformed file, missing input, invalid arguments
  kInsufficientData = 3, // not enough calibration data to fit
  kBindFailure = 4,      // port in use or not bindable
};

// Runs `twin <subcommand> ...`; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace softtwin::cli
