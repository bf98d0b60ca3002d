#pragma once

#include <array>
#include <ostream>
#include <string>
#include <vector>

namespace semod::cli {

inline constexpr std::array<const char*, 7> kCommands = {"degrade", "train-ppu", "train-dtu", "eval",
                                                         "detect",  "bench",     "report"};

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kValidationError = 1;
inline constexpr int kRuntimeFailure = 2;

// args excludes the program name. Help and results go to `out`, diagnostics
// to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace semod::cli
