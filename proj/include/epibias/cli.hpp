#pragma once

#include <string>
#include <vector>

namespace epibias::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitUsage = 64;

inline constexpr const char* kVersion = "0.1.0";

/// Runs one pipeline stage. `args` excludes the program name, e.g. {"simulate", "--ns", "6"}.
int run_command(const std::vector<std::string>& args);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace epibias::cli
