#include "posecl/commands.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "posecl/checkpoint.hpp"
#include "posecl/metrics.hpp"
#include "posecl/runner.hpp"

namespace posecl {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

int exit_code(const Error& e) {
  switch (e.category()) {
    case Error::Category::usage: return 1;
    case Error::Category::runtime: return 2;
    case Error::Category::io: return 3;
  }
  return 2;
}

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return 2;
  }
}

void prepare_output_dir(const fs::path& dir, bool force) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir, ec) && !force)
      throw ConfigError("output directory " + dir.string() + " is not empty (use --force to write into it)");
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::ostream* logger(const RunConfig& config, std::ostream& out) {
  return config.verbosity == Verbosity::quiet ? nullptr : &out;
}

ojson matrix_json(const ScoreMatrix& m) {
  ojson a = ojson::array();
  for (const auto& row : m) a.push_back(row);
  return a;
}

std::string summary_json(const RunConfig& config, const ExperienceResult& r) {
  ojson doc;
  doc["strategy"] = std::string(to_string(config.scenario.strategy.kind));
  doc["seed"] = config.scenario.seed;
  doc["datasets"] = r.datasets;
  doc["metrics"] = r.metrics;
  doc["keypoint_counts"] = r.keypoint_counts;
  doc["final"] = r.primary.back();
  doc["matrix"] = matrix_json(r.primary);
  doc["pck_matrix"] = matrix_json(r.pck);
  doc["ap_matrix"] = matrix_json(r.ap);
  doc["average_accuracy"] = r.average_accuracy;
  ojson forget = ojson::object();
  for (std::size_t j = 0; j < r.datasets.size(); ++j) forget[r.datasets[j]] = forgetting(r, j);
  doc["forgetting"] = forget;
  return doc.dump(2) + "\n";
}

void write_abort(const fs::path& dir, const TrainingAbort& e) {
  ojson doc;
  doc["error"] = e.what();
  doc["experience"] = e.experience();
  doc["epoch"] = e.epoch();
  doc["batch"] = e.batch();
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream(dir / "abort.json") << doc.dump(2) << "\n";
}

std::vector<double> parse_values(const std::vector<std::string>& raw) {
  std::vector<double> out;
  for (const auto& token : raw) {
    std::stringstream ss(token);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || !(v > 0.0) || !std::isfinite(v))
        throw ConfigError("grid value \"" + item + "\" is not a positive number");
      out.push_back(v);
    }
  }
  if (out.empty()) throw ConfigError("grid needs at least one value");
  return out;
}

}  // namespace

int cmd_run(const RunConfig& config, bool force, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const fs::path dir = config.output_dir;
    prepare_output_dir(dir, force);
    ExperienceResult r;
    try {
      r = run_scenario(config.scenario, logger(config, out));
    } catch (const TrainingAbort& e) {
      write_abort(dir, e);
      throw;
    }
    write_file(dir / "config.json", serialize_config(config));
    if (config.exports.csv) {
      std::ostringstream csv;
      write_metrics_csv(r, csv);
      write_file(dir / "metrics.csv", csv.str());
    }
    if (config.exports.json) {
      write_file(dir / "summary.json", summary_json(config, r));
      write_file(dir / "forgetting.json", forgetting_json(r) + "\n");
    }
    if (config.exports.checkpoints)
      for (const auto& c : r.checkpoints)
        save_checkpoint(c, dir / ("experience_" + std::to_string(c.experience) + ".ckpt"));
    if (config.verbosity != Verbosity::quiet) {
      out << "average accuracy " << format_double(r.average_accuracy) << "\n";
      for (std::size_t j = 0; j < r.datasets.size(); ++j)
        out << "  " << r.datasets[j] << " (" << r.metrics[j] << ") final " << format_double(r.primary.back()[j])
            << ", forgetting " << format_double(forgetting(r, j)) << "\n";
      out << "wall clock " << r.wall_seconds << " s\n";
    }
    return 0;
  });
}

int cmd_grid(const RunConfig& config, const std::string& param, const std::vector<std::string>& values, bool force,
             std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const GridParam p = parse_grid_param(param);
    const auto parsed = parse_values(values);
    const fs::path dir = config.output_dir;
    prepare_output_dir(dir, force);
    const auto g = grid_search(config.scenario, p, parsed, logger(config, out));
    std::ostringstream csv;
    csv << csv_quote(to_string(p)) << ',' << csv_quote("average_accuracy");
    for (const auto& d : g.datasets) csv << ',' << csv_quote(d);
    csv << '\n';
    for (const auto& row : g.rows) {
      csv << format_double(row.value) << ',' << format_double(row.average_accuracy);
      for (double f : row.finals) csv << ',' << format_double(f);
      csv << '\n';
    }
    write_file(dir / "grid.csv", csv.str());
    const auto& best = g.rows[g.best];
    out << "best " << to_string(p) << " = " << format_double(best.value) << " (average accuracy "
        << format_double(best.average_accuracy) << ")\n";
    return 0;
  });
}

int cmd_sequences(const RunConfig& config, bool force, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (config.scenario.datasets.size() > kMaxSequenceDatasets)
      throw ConfigError("refusing to enumerate orderings of more than " + std::to_string(kMaxSequenceDatasets) +
                        " datasets");
    const fs::path dir = config.output_dir;
    prepare_output_dir(dir, force);
    const auto rows = run_sequences(config.scenario, logger(config, out));
    std::ostringstream csv;
    csv << csv_quote("rank") << ',' << csv_quote("order") << ',' << csv_quote("average_accuracy");
    for (std::size_t i = 0; i < config.scenario.datasets.size(); ++i)
      csv << ',' << csv_quote("final_" + std::to_string(i + 1));
    csv << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::string order;
      for (const auto& n : rows[i].order) order += (order.empty() ? "" : " > ") + n;
      csv << i + 1 << ',' << csv_quote(order) << ',' << format_double(rows[i].average_accuracy);
      for (double f : rows[i].finals) csv << ',' << format_double(f);
      csv << '\n';
      out << i + 1 << ". " << order << "  " << format_double(rows[i].average_accuracy) << "\n";
    }
    write_file(dir / "sequences.csv", csv.str());
    return 0;
  });
}

SyntheticDatasetConfig resolve_dataset(const std::string& dataset, std::uint64_t seed) {
  if (dataset == "coco" || dataset == "mpii" || dataset == "crowd" || dataset == "halpe")
    return parse_dataset_config("\"" + dataset + "\"", ".", seed);
  std::ifstream in(dataset, std::ios::binary);
  if (!in) throw IoError("cannot read dataset config " + dataset);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset_config(ss.str(), fs::path(dataset).parent_path(), seed);
}

int cmd_eval(const EvalRequest& request, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Checkpoint ckpt = load_checkpoint(request.checkpoint);
    const SyntheticDatasetConfig cfg = resolve_dataset(request.dataset, request.seed);
    if (request.split != "val" && request.split != "train") throw ConfigError("split must be val or train");
    const std::string metric = request.metric == "auto" ? cfg.metric : request.metric;
    if (metric != "pck" && metric != "ap") throw ConfigError("metric must be pck, ap or auto");
    for (const auto& name : cfg.schema.names())
      if (!ckpt.schema.contains(name))
        throw SchemaError("dataset keypoint " + name + " is unknown to the checkpoint");
    const Dataset data = generate_dataset(cfg);
    const auto& scenes = request.split == "val" ? data.val : data.train;
    const double score = evaluate_metric(ckpt.model, ckpt.schema, scenes, cfg.schema, metric);
    out << format_double(score) << "\n";
    return 0;
  });
}

int cmd_export_fixtures(const ScenarioSpec& scenario, const fs::path& out_dir, bool force, std::ostream& out,
                        std::ostream& err) {
  return guarded(err, [&] {
    prepare_output_dir(out_dir, force);
    for (const auto& cfg : scenario.datasets) {
      const Dataset data = generate_dataset(cfg);
      const fs::path path = out_dir / (cfg.name + ".jsonl");
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot write " + path.string());
      export_fixtures(data, f);
      if (!f) throw IoError("failed writing " + path.string());
      out << path.string() << "\n";
    }
    return 0;
  });
}

}  // namespace posecl
