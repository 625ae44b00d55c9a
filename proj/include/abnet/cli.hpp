#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace abnet {

inline constexpr const char* kVersion = "0.1.0";

enum ExitStatus : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

struct CliOptions {
  std::string command;  // synth | pretrain | train | eval | rotate | sweep
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;  // overrides output_dir
  std::optional<std::uint64_t> seed;         // overrides seed
  std::size_t jobs = 1;
};

const std::vector<std::string>& cli_commands();

// Runs one command. Progress goes to log, diagnostics to err. Nothing is written to
// disk unless the config validates.
int execute(const CliOptions& options, std::ostream& log, std::ostream& err);

// Parses argv (program name first) and runs the command.
int cli_main(int argc, const char* const* argv, std::ostream& log, std::ostream& err);

}  // namespace abnet
