#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "posecl/commands.hpp"
#include "posecl/config.hpp"

using namespace posecl;

int main(int argc, char** argv) {
  CLI::App app{"Continual pose-estimation experiments on synthetic stick figures"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool force = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "run configuration (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--out", out_dir, "output directory (overrides the config)");
    cmd->add_option("--seed", seed, "scenario seed (overrides the config)");
    cmd->add_flag("--force", force, "write into a non-empty output directory");
  };

  auto* run = app.add_subcommand("run", "train a scenario and write metrics, summary and checkpoints");
  add_common(run, true);

  std::string param;
  std::vector<std::string> values;
  auto* grid = app.add_subcommand("grid", "sweep lambda or tau over a list of values");
  add_common(grid, true);
  grid->add_option("--param", param, "lambda or tau")->required();
  grid->add_option("--values", values, "comma-separated values")->required();

  auto* seq = app.add_subcommand("sequences", "run every ordering of the scenario's datasets");
  add_common(seq, true);

  EvalRequest eval_req;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_req.checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", eval_req.dataset, "preset (coco, mpii, crowd, halpe) or dataset JSON file")
      ->required();
  eval->add_option("--metric", eval_req.metric, "pck, ap or auto");
  eval->add_option("--split", eval_req.split, "val or train");
  eval->add_option("--seed", seed, "seed the dataset presets derive from");

  auto* fixtures = app.add_subcommand("export-fixtures", "write the scenario's datasets as JSON lines");
  add_common(fixtures, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  auto load = [&]() -> RunConfig {
    RunConfig cfg = config_path.empty() ? parse_config_text(R"({"strategy": "finetune"})", ".", seed)
                                        : parse_config(config_path, seed);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    return cfg;
  };

  if (*eval) {
    if (seed) eval_req.seed = *seed;
    return cmd_eval(eval_req, std::cout, std::cerr);
  }
  RunConfig cfg;
  if (int rc = guarded(std::cerr, [&] { cfg = load(); return 0; }); rc != 0) return rc;
  if (*run) return cmd_run(cfg, force, std::cout, std::cerr);
  if (*grid) return cmd_grid(cfg, param, values, force, std::cout, std::cerr);
  if (*seq) return cmd_sequences(cfg, force, std::cout, std::cerr);
  if (*fixtures) return cmd_export_fixtures(cfg.scenario, cfg.output_dir, force, std::cout, std::cerr);
  return 1;
}
