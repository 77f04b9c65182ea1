#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "posecl/commands.hpp"
#include "posecl/config.hpp"
#include "posecl/errors.hpp"
#include "posecl/metrics.hpp"
#include "posecl/runner.hpp"
#include "support.hpp"

using namespace posecl;
using namespace posecl::testing;
namespace fs = std::filesystem;

namespace {

/// Splits one CSV record, requiring every non-numeric field to be quoted.
std::vector<std::string> strict_csv_fields(const std::string& line, bool& ok) {
  std::vector<std::string> out;
  std::size_t i = 0;
  ok = true;
  while (i <= line.size()) {
    std::string field;
    if (i < line.size() && line[i] == '"') {
      ++i;
      while (i < line.size()) {
        if (line[i] == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          i += 2;
        } else if (line[i] == '"') {
          ++i;
          break;
        } else {
          field += line[i++];
        }
      }
    } else {
      while (i < line.size() && line[i] != ',') field += line[i++];
      char* end = nullptr;
      std::strtod(field.c_str(), &end);
      if (field.empty() || *end != '\0') ok = false;
    }
    out.push_back(field);
    if (i < line.size() && line[i] != ',') ok = false;
    ++i;
  }
  return out;
}

std::string tiny_config(const std::string& strategy, const fs::path& out_dir) {
  nlohmann::json j = {
      {"strategy", nlohmann::json::parse(strategy)},
      {"scenario",
       {{"first_epochs", 2},
        {"epochs", 2},
        {"eval_every", 1},
        {"batch_size", 16},
        {"hidden", {12, 12}},
        {"datasets",
         {{{"preset", "coco"}, {"n_train", 32}, {"n_val", 16}},
          {{"preset", "mpii"}, {"n_train", 32}, {"n_val", 16}},
          {{"preset", "crowd"}, {"n_train", 32}, {"n_val", 16}}}}}},
      {"output", {{"dir", out_dir.string()}}},
      {"verbosity", "quiet"}};
  return j.dump();
}

}  // namespace

TEST_CASE("forgetting and average accuracy follow the score matrix") {
  const ScoreMatrix m = {{80.0}, {60.0, 70.0}, {50.0, 65.0, 90.0}};
  CHECK(forgetting(m, 0) == 30.0);
  CHECK(forgetting(m, 1) == 5.0);
  CHECK(forgetting(m, 2) == 0.0);
  CHECK_THROWS_AS(forgetting(m, 3), IndexError);
  ExperienceResult r;
  r.primary = m;
  CHECK(average_accuracy(r) == doctest::Approx(205.0 / 3.0));
}

TEST_CASE("format_double round-trips and csv_quote escapes quotes") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -0.0})
    CHECK(std::stod(format_double(v)) == v);
  CHECK(csv_quote("a,b") == "\"a,b\"");
  CHECK(csv_quote("say \"hi\"") == "\"say \"\"hi\"\"\"");
}

TEST_CASE("scenario runs are deterministic and scores stay in range") {
  const auto spec = quick_scenario(StrategyKind::lwf);
  const auto a = run_scenario(spec);
  const auto b = run_scenario(spec);
  CHECK(a.primary == b.primary);
  CHECK(a.pck == b.pck);
  CHECK(a.ap == b.ap);
  CHECK(a.keypoint_counts == std::vector<std::size_t>{17, 21, 21});
  REQUIRE(a.primary.size() == 3);
  double lo = 1e9, hi = -1e9;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.primary[i].size() == i + 1);
    for (std::size_t j = 0; j <= i; ++j) {
      for (const auto* m : {&a.pck, &a.ap}) {
        CHECK((*m)[i][j] >= 0.0);
        CHECK((*m)[i][j] <= 100.0);
      }
    }
  }
  for (double v : a.primary.back()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(a.average_accuracy >= lo);
  CHECK(a.average_accuracy <= hi);
  CHECK(a.checkpoints.size() == 3);
}

TEST_CASE("every strategy at lambda zero reproduces fine-tuning bit for bit") {
  const auto base = run_scenario(quick_scenario(StrategyKind::finetune, 5, 32, 16, 2));
  for (auto k : {StrategyKind::ewc_separate, StrategyKind::ewc_online, StrategyKind::lfl, StrategyKind::lwf,
                 StrategyKind::iwd}) {
    auto spec = quick_scenario(k, 5, 32, 16, 2);
    spec.strategy.lambda = 0.0;
    const auto r = run_scenario(spec);
    INFO(to_string(k));
    CHECK(r.pck == base.pck);
    CHECK(r.ap == base.ap);
  }
}

TEST_CASE("modifiers run end to end and change the outcome") {
  auto spec = quick_scenario(StrategyKind::lwf, 5, 32, 16, 2);
  const auto plain = run_scenario(spec);
  spec.strategy.modifiers = {Modifier::progressive_unfreeze, Modifier::time_scaled_lambda,
                             Modifier::teacher_output_scaling};
  const auto modified = run_scenario(spec);
  CHECK(modified.primary.size() == 3);
  CHECK(modified.pck != plain.pck);
}

TEST_CASE("expanding the head leaves scores on the first dataset unchanged") {
  auto spec = quick_scenario(StrategyKind::finetune, 7, 32, 24, 2);
  const auto steps = build_scenario(spec.datasets);
  Model m = tiny_model(64, spec.hidden, 17, spec.grid, 3);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 16;
  train_experience(m, steps[0], spec.strategy, nullptr, opt);
  const auto before = evaluate_both(m, steps[0].cumulative, steps[0].dataset.val, steps[0].dataset.config.schema);
  const Model grown = expand_head(m, steps[1].cumulative.size());
  const auto after =
      evaluate_both(grown, steps[1].cumulative, steps[0].dataset.val, steps[0].dataset.config.schema);
  CHECK(before.pck == after.pck);
  CHECK(before.ap == after.ap);
}

TEST_CASE("training refuses a context on the first experience and requires one later") {
  auto spec = quick_scenario(StrategyKind::lwf, 7, 16, 8, 1);
  const auto steps = build_scenario(spec.datasets);
  Model m = tiny_model(64, spec.hidden, 17, spec.grid, 3);
  TrainOptions opt;
  opt.epochs = 1;
  RegContext ctx;
  CHECK_THROWS(train_experience(m, steps[0], spec.strategy, &ctx, opt));
  opt.experience = 2;
  Model g = expand_head(m, 21);
  CHECK_THROWS(train_experience(g, steps[1], spec.strategy, nullptr, opt));
}

TEST_CASE("metrics csv is strict and keeps the history in order") {
  const auto r = run_scenario(quick_scenario(StrategyKind::finetune, 3, 32, 16, 2));
  std::ostringstream out;
  write_metrics_csv(r, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "experience,epoch,dataset,metric,value");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    bool ok = true;
    const auto f = strict_csv_fields(line, ok);
    CHECK(ok);
    CHECK(f.size() == 5);
    ++rows;
  }
  CHECK(rows == r.history.size());
  const auto doc = nlohmann::json::parse(forgetting_json(r));
  CHECK(doc["datasets"].size() == 3);
  CHECK(doc["datasets"][0]["forgetting"].get<double>() == forgetting(r, 0));
}

TEST_CASE("config parsing fills defaults, rejects unknown keys and round-trips") {
  const auto c = parse_config_text(R"({"strategy": "ewc_online"})");
  CHECK(c.scenario.strategy.kind == StrategyKind::ewc_online);
  CHECK(c.scenario.strategy.lambda == 0.2);
  CHECK(c.scenario.strategy.gamma == 0.7);
  CHECK(c.scenario.seed == 22);
  CHECK(c.scenario.datasets.size() == 3);
  CHECK(parse_config_text(serialize_config(c)) == c);

  const auto custom = parse_config_text(
      R"({"strategy": {"name": "iwd", "lambda": 0.3, "lambda_iwd": 0.5, "modifiers": ["time_scaled_lambda"]},
          "scenario": {"seed": 9, "datasets": ["mpii", {"preset": "coco", "n_train": 10, "pose_family": "mixed"}]}})");
  CHECK(custom.scenario.strategy.lambda == 0.3);
  CHECK(custom.scenario.strategy.has(Modifier::time_scaled_lambda));
  CHECK(custom.scenario.datasets.size() == 2);
  CHECK(custom.scenario.datasets[1].n_train == 10);
  CHECK(parse_config_text(serialize_config(custom)) == custom);
  CHECK(parse_config_text(R"({"strategy": "lwf"})", ".", 5).scenario.seed == 5);
  CHECK(parse_config_text(R"({"strategy": "lwf"})", ".", 5).scenario.datasets ==
        parse_config_text(R"({"strategy": "lwf", "scenario": {"seed": 5}})").scenario.datasets);

  CHECK_THROWS_AS(parse_config_text(R"({"strategy": "lwf", "colour": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"strategy": {"name": "lwf", "lamda": 0.1}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"strategy": {"name": "lwf", "lambda": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"strategy": "lwf")"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"strategy": "lwf", "scenario": {"datasets": [{"schema": {"file": "missing.json"}}]}})"),
                  IoError);
  CHECK_THROWS_AS(parse_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("commands write deterministic outputs and map errors to exit codes") {
  const fs::path dir = scratch_dir("cmd_run");
  const auto cfg = parse_config_text(tiny_config(R"("iwd")", dir));
  std::ostringstream out, err;
  REQUIRE(cmd_run(cfg, false, out, err) == 0);
  for (const char* f : {"config.json", "metrics.csv", "summary.json", "forgetting.json", "experience_1.ckpt",
                        "experience_3.ckpt"})
    CHECK(fs::exists(dir / f));
  CHECK(parse_config(dir / "config.json") == cfg);

  std::ostringstream o2, e2;
  CHECK(cmd_run(cfg, false, o2, e2) == 1);

  EvalRequest req{dir / "experience_3.ckpt", "coco", 22, "auto", "val"};
  std::ostringstream o3, e3;
  CHECK(cmd_eval(req, o3, e3) == 0);
  CHECK_FALSE(o3.str().empty());
  req.checkpoint = dir / "missing.ckpt";
  CHECK(cmd_eval(req, o3, e3) == 3);
  req.checkpoint = dir / "experience_1.ckpt";
  req.dataset = "halpe";
  CHECK(cmd_eval(req, o3, e3) == 1);

  CHECK(exit_code(ConfigError("x")) == 1);
  CHECK(exit_code(NumericError("x")) == 2);
  CHECK(exit_code(TrainingAbort("x", 1, 2, 3)) == 2);
  CHECK(exit_code(IoError("x")) == 3);
  CHECK(exit_code(FormatError("x")) == 3);
  fs::remove_all(dir);
}

TEST_CASE("grid search reports one row per value and the argmax") {
  auto spec = quick_scenario(StrategyKind::lwf, 22, 24, 12, 1);
  const auto g = grid_search(spec, GridParam::tau, {0.5, 2.0, 8.0});
  REQUIRE(g.rows.size() == 3);
  for (const auto& r : g.rows) CHECK(r.average_accuracy <= g.rows[g.best].average_accuracy);
  CHECK(g.rows[1].value == 2.0);
  CHECK_THROWS_AS(parse_grid_param("gamma"), ConfigError);
}

TEST_CASE("sequence runs rank every ordering") {
  auto spec = quick_scenario(StrategyKind::finetune, 22, 24, 12, 1);
  const auto rows = run_sequences(spec);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i - 1].average_accuracy >= rows[i].average_accuracy);
  std::set<std::vector<std::string>> orders;
  for (const auto& r : rows) orders.insert(r.order);
  CHECK(orders.size() == 6);
  spec.datasets.push_back(halpe_dataset(22));
  spec.datasets.push_back(halpe_dataset(23));
  CHECK_THROWS_AS(run_sequences(spec), ConfigError);
}
