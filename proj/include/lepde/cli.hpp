#pragma once

// Command-line pipelines: generate | train | rollout | evaluate | invert | benchmark.
// Each command reads a JSON config (defaults, then --config file, then
// convenience flags, then --set a.b=value, then LEPDE_SEED) and writes its
// outputs under a run directory together with the resolved config.

#include <filesystem>
#include <string>
#include <vector>

#include "lepde/data.hpp"

namespace lepde::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitSchema = 3;
inline constexpr int kExitMissingPath = 4;

int run(int argc, const char* const* argv);

/// The full schema of a command with its defaults. Null leaves mean "derive".
json default_config(const std::string& command);

/// Overlays patch onto base; keys absent from base raise SchemaMismatch.
void merge_checked(json& base, const json& patch, const std::string& where = "");
/// "a.b.c=value": value is parsed as JSON when possible, else taken as a string.
void apply_override(json& cfg, const std::string& assignment);
/// Defaults <- file <- overrides <- LEPDE_SEED (when env_seed is non-null).
json resolve_config(const std::string& command, const json& file_cfg, const std::vector<std::string>& overrides,
                    const char* env_seed);

GenerateConfig generate_config_from_json(const json& cfg);

/// Writes <stem>.json and <stem>.csv. The CSV holds report["rows"] when that
/// is an array of objects, otherwise one key,value line per scalar leaf.
void emit_report(const json& report, const std::filesystem::path& stem);

}  // namespace lepde::cli
