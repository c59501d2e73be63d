#pragma once

#include <chrono>
#include <string>
#include <vector>

namespace hiva {

struct ProcessResult {
    int exit_code = -1;
    bool timed_out = false;
    std::string out;
    std::string err;
};

// Runs argv with `input` on stdin and a hard deadline; the child is killed
// on timeout. The environment is scrubbed down to PATH (and LC_ALL=C) so
// spawned tools inherit no credentials.
ProcessResult run_process(const std::vector<std::string>& argv, const std::string& input,
                          std::chrono::milliseconds timeout);

}  // namespace hiva
