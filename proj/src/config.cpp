#include "posecl/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <json.hpp>

#include "posecl/errors.hpp"

namespace posecl {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + where);
  }
}

template <class T>
T get(const json& obj, const char* key, const std::string& where, T fallback) {
  const auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key \"" + std::string(key) + "\" in " + where + " has the wrong type");
  }
}

const json* child(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

SyntheticDatasetConfig preset(const std::string& name, std::uint64_t seed) {
  const auto ref = reference_datasets(seed);
  if (name == "coco") return ref[0];
  if (name == "mpii") return ref[1];
  if (name == "crowd") return ref[2];
  if (name == "halpe") return halpe_dataset(seed);
  throw ConfigError("unknown dataset preset " + name + " (expected coco, mpii, crowd or halpe)");
}

KeypointSchema parse_schema(const json& j, const std::filesystem::path& base_dir, const std::string& where) {
  if (j.is_string()) {
    const auto id = j.get<std::string>();
    if (!is_builtin_schema(id)) throw ConfigError("unknown schema " + id + " in " + where);
    return builtin_schema(id);
  }
  check_keys(j, {"id", "names", "file"}, where + ".schema");
  if (const auto* file = child(j, "file")) {
    if (child(j, "names")) throw ConfigError(where + ".schema gives both names and file");
    const auto path = base_dir / file->get<std::string>();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("schema file " + path.string() + " does not exist");
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_coco_schema(ss.str(), get<std::string>(j, "id", where, path.stem().string()));
  }
  const auto* names = child(j, "names");
  if (!names) throw ConfigError(where + ".schema needs names or file");
  return KeypointSchema(get<std::string>(j, "id", where, "custom"), get<std::vector<std::string>>(j, "names", where, {}));
}

SyntheticDatasetConfig parse_dataset(const json& j, const std::filesystem::path& base_dir, std::uint64_t seed,
                                     const std::string& where) {
  if (j.is_string()) return preset(j.get<std::string>(), seed);
  check_keys(j,
             {"preset", "name", "schema", "n_train", "n_val", "persons", "occlusion_rate", "pose_family",
              "noise_level", "seed", "image", "metric", "figure_height"},
             where);
  SyntheticDatasetConfig d = preset(get<std::string>(j, "preset", where, "coco"), seed);
  d.name = get(j, "name", where, d.name);
  if (const auto* s = child(j, "schema")) d.schema = parse_schema(*s, base_dir, where);
  d.n_train = get(j, "n_train", where, d.n_train);
  d.n_val = get(j, "n_val", where, d.n_val);
  if (child(j, "persons")) {
    const auto v = get<std::vector<int>>(j, "persons", where, {});
    if (v.size() != 2) throw ConfigError(where + ".persons must be [min, max]");
    d.person_count_range = {v[0], v[1]};
  }
  d.occlusion_rate = get(j, "occlusion_rate", where, d.occlusion_rate);
  if (const auto* f = child(j, "pose_family")) {
    const std::string name = f->is_string() ? f->get<std::string>() : "";
    if (name == "standing") d.pose_distribution = 0;
    else if (name == "reaching") d.pose_distribution = 1;
    else if (name == "crouching") d.pose_distribution = 2;
    else if (name == "mixed") d.pose_distribution = 3;
    else throw ConfigError(where + ".pose_family must be standing, reaching, crouching or mixed");
  }
  d.noise_level = get(j, "noise_level", where, d.noise_level);
  if (child(j, "figure_height")) {
    const auto v = get<std::vector<double>>(j, "figure_height", where, {});
    if (v.size() != 2) throw ConfigError(where + ".figure_height must be [min, max]");
    d.figure_height = {v[0], v[1]};
  }
  d.seed = get(j, "seed", where, d.seed);
  if (const auto* img = child(j, "image")) {
    check_keys(*img, {"rows", "cols"}, where + ".image");
    d.image.rows = get(*img, "rows", where + ".image", d.image.rows);
    d.image.cols = get(*img, "cols", where + ".image", d.image.cols);
  }
  d.metric = get(j, "metric", where, d.metric);
  try {
    d.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return d;
}

StrategyConfig parse_strategy(const json& j) {
  if (j.is_string()) return StrategyConfig::defaults(parse_strategy_kind(j.get<std::string>()));
  const std::string where = "strategy";
  check_keys(j,
             {"name", "lambda", "tau", "gamma", "lambda_iwd", "modifiers", "temperature_clamp", "fisher_max_samples",
              "iwd_head_domain"},
             where);
  if (!child(j, "name")) throw ConfigError("strategy needs a name");
  StrategyConfig s = StrategyConfig::defaults(parse_strategy_kind(get<std::string>(j, "name", where, "")));
  s.lambda = get(j, "lambda", where, s.lambda);
  s.tau = get(j, "tau", where, s.tau);
  s.gamma = get(j, "gamma", where, s.gamma);
  s.lambda_iwd = get(j, "lambda_iwd", where, s.lambda_iwd);
  for (const auto& m : get<std::vector<std::string>>(j, "modifiers", where, {})) s.modifiers.insert(parse_modifier(m));
  if (const auto* c = child(j, "temperature_clamp")) {
    check_keys(*c, {"min", "max"}, "strategy.temperature_clamp");
    s.temperature_clamp.min = get(*c, "min", where, s.temperature_clamp.min);
    s.temperature_clamp.max = get(*c, "max", where, s.temperature_clamp.max);
  }
  s.fisher_max_samples = get(j, "fisher_max_samples", where, s.fisher_max_samples);
  const auto domain = get<std::string>(j, "iwd_head_domain", where, "per_channel");
  if (domain == "per_channel") s.iwd_head_domain = HeadSoftmaxDomain::per_channel;
  else if (domain == "flatten") s.iwd_head_domain = HeadSoftmaxDomain::flatten;
  else throw ConfigError("strategy.iwd_head_domain must be per_channel or flatten");
  return s;
}

std::string pose_family_name(int p) {
  static const char* names[] = {"standing", "reaching", "crouching", "mixed"};
  return names[p];
}

}  // namespace

RunConfig parse_config_text(std::string_view text, const std::filesystem::path& base_dir,
                            std::optional<std::uint64_t> seed) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, {"strategy", "scenario", "output", "verbosity"}, "config");

  RunConfig cfg;
  ScenarioSpec& sc = cfg.scenario;
  if (const auto* s = child(root, "strategy")) sc.strategy = parse_strategy(*s);
  else throw ConfigError("config needs a strategy");

  json scenario = root.value("scenario", json::object());
  const std::string where = "scenario";
  check_keys(scenario,
             {"datasets", "first_epochs", "epochs", "batch_size", "eval_every", "seed", "hidden", "grid",
              "heatmap_sigma", "optimizer"},
             where);
  sc.seed = seed ? *seed : get(scenario, "seed", where, sc.seed);
  if (const auto* ds = child(scenario, "datasets")) {
    if (!ds->is_array() || ds->empty()) throw ConfigError("scenario.datasets must be a non-empty list");
    for (std::size_t i = 0; i < ds->size(); ++i)
      sc.datasets.push_back(parse_dataset((*ds)[i], base_dir, sc.seed, "scenario.datasets[" + std::to_string(i) + "]"));
  } else {
    sc.datasets = reference_datasets(sc.seed);
  }
  sc.first_epochs = get(scenario, "first_epochs", where, sc.first_epochs);
  sc.epochs = get(scenario, "epochs", where, sc.epochs);
  sc.batch_size = get(scenario, "batch_size", where, sc.batch_size);
  sc.eval_every = get(scenario, "eval_every", where, sc.eval_every);
  sc.hidden = get(scenario, "hidden", where, sc.hidden);
  if (const auto* g = child(scenario, "grid")) {
    check_keys(*g, {"rows", "cols"}, "scenario.grid");
    sc.grid.rows = get(*g, "rows", where, sc.grid.rows);
    sc.grid.cols = get(*g, "cols", where, sc.grid.cols);
  }
  sc.heatmap_sigma = get(scenario, "heatmap_sigma", where, sc.heatmap_sigma);
  if (const auto* o = child(scenario, "optimizer")) {
    check_keys(*o, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "scenario.optimizer");
    sc.optimizer.lr = get(*o, "lr", where, sc.optimizer.lr);
    sc.optimizer.beta1 = get(*o, "beta1", where, sc.optimizer.beta1);
    sc.optimizer.beta2 = get(*o, "beta2", where, sc.optimizer.beta2);
    sc.optimizer.eps = get(*o, "eps", where, sc.optimizer.eps);
    sc.optimizer.weight_decay = get(*o, "weight_decay", where, sc.optimizer.weight_decay);
  }

  if (const auto* out = child(root, "output")) {
    check_keys(*out, {"dir", "csv", "json", "checkpoints"}, "output");
    cfg.output_dir = get(*out, "dir", "output", cfg.output_dir);
    cfg.exports.csv = get(*out, "csv", "output", cfg.exports.csv);
    cfg.exports.json = get(*out, "json", "output", cfg.exports.json);
    cfg.exports.checkpoints = get(*out, "checkpoints", "output", cfg.exports.checkpoints);
  }
  const auto verbosity = get<std::string>(root, "verbosity", "config", "info");
  if (verbosity == "quiet") cfg.verbosity = Verbosity::quiet;
  else if (verbosity == "info") cfg.verbosity = Verbosity::info;
  else if (verbosity == "debug") cfg.verbosity = Verbosity::debug;
  else throw ConfigError("verbosity must be quiet, info or debug");

  try {
    sc.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path(), seed);
}

SyntheticDatasetConfig parse_dataset_config(std::string_view text, const std::filesystem::path& base_dir,
                                            std::uint64_t seed) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("dataset config is not valid JSON: ") + e.what());
  }
  return parse_dataset(j, base_dir, seed, "dataset");
}

std::string serialize_config(const RunConfig& cfg) {
  const ScenarioSpec& sc = cfg.scenario;
  const StrategyConfig& st = sc.strategy;
  ojson strategy;
  strategy["name"] = std::string(to_string(st.kind));
  strategy["lambda"] = st.lambda;
  strategy["tau"] = st.tau;
  strategy["gamma"] = st.gamma;
  strategy["lambda_iwd"] = st.lambda_iwd;
  strategy["modifiers"] = ojson::array();
  for (auto m : st.modifiers) strategy["modifiers"].push_back(std::string(to_string(m)));
  strategy["temperature_clamp"] = {{"min", st.temperature_clamp.min}, {"max", st.temperature_clamp.max}};
  strategy["fisher_max_samples"] = st.fisher_max_samples;
  strategy["iwd_head_domain"] = st.iwd_head_domain == HeadSoftmaxDomain::flatten ? "flatten" : "per_channel";

  ojson datasets = ojson::array();
  for (const auto& d : sc.datasets) {
    ojson o;
    o["name"] = d.name;
    o["schema"] = {{"id", d.schema.id()}, {"names", d.schema.names()}};
    o["n_train"] = d.n_train;
    o["n_val"] = d.n_val;
    o["persons"] = {d.person_count_range.first, d.person_count_range.second};
    o["occlusion_rate"] = d.occlusion_rate;
    o["pose_family"] = pose_family_name(d.pose_distribution);
    o["noise_level"] = d.noise_level;
    o["figure_height"] = {d.figure_height.first, d.figure_height.second};
    o["seed"] = d.seed;
    o["image"] = {{"rows", d.image.rows}, {"cols", d.image.cols}};
    o["metric"] = d.metric;
    datasets.push_back(o);
  }

  ojson root;
  root["strategy"] = strategy;
  root["scenario"] = {{"datasets", datasets},
                      {"first_epochs", sc.first_epochs},
                      {"epochs", sc.epochs},
                      {"batch_size", sc.batch_size},
                      {"eval_every", sc.eval_every},
                      {"seed", sc.seed},
                      {"hidden", sc.hidden},
                      {"grid", {{"rows", sc.grid.rows}, {"cols", sc.grid.cols}}},
                      {"heatmap_sigma", sc.heatmap_sigma},
                      {"optimizer",
                       {{"lr", sc.optimizer.lr},
                        {"beta1", sc.optimizer.beta1},
                        {"beta2", sc.optimizer.beta2},
                        {"eps", sc.optimizer.eps},
                        {"weight_decay", sc.optimizer.weight_decay}}}};
  root["output"] = {{"dir", cfg.output_dir},
                    {"csv", cfg.exports.csv},
                    {"json", cfg.exports.json},
                    {"checkpoints", cfg.exports.checkpoints}};
  root["verbosity"] = cfg.verbosity == Verbosity::quiet ? "quiet" : cfg.verbosity == Verbosity::debug ? "debug" : "info";
  return root.dump(2) + "\n";
}

}  // namespace posecl
