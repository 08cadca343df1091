#pragma once

#include <string>
#include <vector>

namespace udepth::cli {

// Dispatches the subcommands (synth, train, eval-depth, eval-pose, warp,
// info). Returns 0 on success, 2 on usage errors, 1 on runtime errors; all
// diagnostics go to stderr prefixed with "error: ".
int run(const std::vector<std::string>& args);

}  // namespace udepth::cli
