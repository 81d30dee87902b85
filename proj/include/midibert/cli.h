#pragma once

#include <string>

namespace midibert {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

/// Entry point for the `midibert` tool: synth, prepare, pretrain, finetune,
/// eval and skyline subcommands. Returns the process exit code.
int run_cli(int argc, char** argv);

/// Hex SHA-256 of a file's bytes. Throws IoError when unreadable.
std::string sha256_file(const std::string& path);

}  // namespace midibert
