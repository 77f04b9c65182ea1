#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "posecl/config.hpp"
#include "posecl/errors.hpp"

namespace posecl {

/// 0 success, 1 config or usage, 2 runtime abort, 3 I/O.
int exit_code(const Error& e);

/// Runs `body`, reporting library errors on `err` and mapping them to exit codes.
int guarded(std::ostream& err, const std::function<int()>& body);

/// Fails unless `dir` is missing or empty, or `force` is set. Creates it.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

int cmd_run(const RunConfig& config, bool force, std::ostream& out, std::ostream& err);
int cmd_grid(const RunConfig& config, const std::string& param, const std::vector<std::string>& values, bool force,
             std::ostream& out, std::ostream& err);
int cmd_sequences(const RunConfig& config, bool force, std::ostream& out, std::ostream& err);

struct EvalRequest {
  std::filesystem::path checkpoint;
  std::string dataset;  // preset name (coco, mpii, crowd, halpe) or dataset JSON file
  std::uint64_t seed = 22;
  std::string metric = "auto";  // pck, ap, or the dataset's own metric
  std::string split = "val";
};
int cmd_eval(const EvalRequest& request, std::ostream& out, std::ostream& err);

/// Writes <out_dir>/<dataset name>.jsonl for every dataset of the scenario.
int cmd_export_fixtures(const ScenarioSpec& scenario, const std::filesystem::path& out_dir, bool force,
                        std::ostream& out, std::ostream& err);

/// Resolves a preset name or a dataset JSON file.
SyntheticDatasetConfig resolve_dataset(const std::string& dataset, std::uint64_t seed);

}  // namespace posecl
