#ifndef MNM_CLI_HPP
#define MNM_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace mnm {

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2 };

/// Runs one invocation of the `mnm` tool. `args` excludes the program name.
/// Subcommands: generate, train, eval, embed.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace mnm

#endif
