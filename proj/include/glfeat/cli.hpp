#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace glfeat::cli {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

// Every recognised key with its default value.
nlohmann::json default_config();

// Defaults, then the JSON file (if any), then "dot.path=value" overrides.
// Unknown keys and type mismatches throw ArgumentError.
nlohmann::json resolve_config(const std::string& config_path,
                              const std::vector<std::string>& overrides);

void apply_override(nlohmann::json& config, const std::string& assignment);

// Entry point of the `glfeat` tool; returns the process exit code.
int run(int argc, char** argv);

}  // namespace glfeat::cli
