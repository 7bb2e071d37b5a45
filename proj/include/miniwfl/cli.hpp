#pragma once

#include <iosfwd>
#include <memory>
#include <string>

namespace miniwfl {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitFailed = 2;
inline constexpr int kExitUsage = 3;

class Launcher;

// Seams for tests: replace process launching or the container CLI name.
struct CliHooks {
  std::shared_ptr<const Launcher> launcher;  // default PosixLauncher
  std::string container_cli;                 // default "docker"
};

/// Entry point of the `miniwfl` tool: run, validate, graph and upgrade.
/// Machine output goes to `out`, diagnostics and progress to `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const CliHooks& hooks);

}  // namespace miniwfl
