#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "posecl/runner.hpp"

namespace posecl {

enum class Verbosity { quiet, info, debug };

struct ExportFlags {
  bool csv = true;
  bool json = true;
  bool checkpoints = true;

  friend bool operator==(const ExportFlags&, const ExportFlags&) = default;
};

struct RunConfig {
  ScenarioSpec scenario;  // scenario.strategy is the strategy in use
  std::string output_dir = "out";
  ExportFlags exports;
  Verbosity verbosity = Verbosity::info;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// JSON text to a validated config with defaults applied. Unknown keys and
/// out-of-range values raise ConfigError; schema files are resolved relative
/// to `base_dir` and must exist (IoError otherwise). `seed` overrides the
/// scenario seed before dataset seeds are derived from it.
RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir = ".",
                            std::optional<std::uint64_t> seed = std::nullopt);
RunConfig parse_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed = std::nullopt);

/// Fully explicit JSON form; parses back to an equal config.
std::string serialize_config(const RunConfig& config);

/// Dataset config from a JSON object (as found in the "datasets" list).
SyntheticDatasetConfig parse_dataset_config(std::string_view text, const std::filesystem::path& base_dir = ".",
                                            std::uint64_t seed = 22);

}  // namespace posecl
