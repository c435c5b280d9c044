#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace psyn::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

/// Whole command line in, exit status out. Reports go to `out`; a failure is
/// one line on `err`: "error <kind>: <message>".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Top-level help footer: every key with its group, default and meaning.
std::string keys_help();

}  // namespace psyn::cli
