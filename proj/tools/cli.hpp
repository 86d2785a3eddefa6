#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace setrack::cli
{
enum ExitCode : int
{
        Success = 0,
        ConfigFailure = 2,
        DataFailure = 3,
        DegenerateFailure = 4
};

/// Runs `setrack <args...>` in-process; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
}
