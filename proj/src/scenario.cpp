#include "posecl/scenario.hpp"

#include <bit>

#include <json.hpp>

#include "posecl/errors.hpp"

namespace posecl {

std::vector<KeypointSchema> cumulative_schemas(std::span<const SyntheticDatasetConfig> configs) {
  if (configs.empty()) throw SpecError("scenario needs at least one dataset");
  std::vector<KeypointSchema> out;
  KeypointSchema acc = configs.front().schema;
  out.push_back(acc);
  for (std::size_t i = 1; i < configs.size(); ++i) {
    acc = schema_union(acc, configs[i].schema).schema;
    out.push_back(acc);
  }
  return out;
}

std::vector<ScenarioStep> build_scenario(std::span<const SyntheticDatasetConfig> configs) {
  const auto schemas = cumulative_schemas(configs);
  std::vector<ScenarioStep> steps;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Dataset d = generate_dataset(configs[i]);
    SchemaMapping m = map_into(configs[i].schema, schemas[i]);
    if (i > 0) m.new_indices = schema_union(schemas[i - 1], configs[i].schema).incoming.new_indices;
    steps.push_back({std::move(d), std::move(m), schemas[i]});
  }
  return steps;
}

std::vector<SyntheticDatasetConfig> reference_datasets(std::uint64_t seed) {
  SyntheticDatasetConfig coco;
  coco.name = "synthetic-coco";
  coco.schema = builtin_schema("coco17");
  coco.pose_distribution = static_cast<int>(PoseFamily::standing);
  coco.person_count_range = {1, 1};
  coco.occlusion_rate = 0.05;
  coco.metric = "ap";
  coco.seed = seed + 1000;

  SyntheticDatasetConfig mpii = coco;
  mpii.name = "synthetic-mpii";
  mpii.schema = builtin_schema("mpii16");
  mpii.pose_distribution = static_cast<int>(PoseFamily::reaching);
  mpii.metric = "pck";
  mpii.seed = seed + 2000;

  SyntheticDatasetConfig crowd = coco;
  crowd.name = "synthetic-crowd";
  crowd.schema = builtin_schema("crowdpose14");
  crowd.pose_distribution = static_cast<int>(PoseFamily::crouching);
  crowd.person_count_range = {2, 4};
  crowd.occlusion_rate = 0.3;
  crowd.figure_height = {0.3, 0.55};
  crowd.metric = "ap";
  crowd.seed = seed + 3000;

  return {coco, mpii, crowd};
}

SyntheticDatasetConfig halpe_dataset(std::uint64_t seed) {
  SyntheticDatasetConfig h = reference_datasets(seed).front();
  h.name = "synthetic-halpe";
  h.schema = builtin_schema("halpe26");
  h.pose_distribution = static_cast<int>(PoseFamily::mixed);
  h.seed = seed + 4000;
  return h;
}

std::string base64_encode(std::span<const unsigned char> bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (const auto rest = bytes.size() - i; rest > 0) {
    unsigned v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

void export_fixtures(const Dataset& dataset, std::ostream& out) {
  auto emit = [&](const Scene& s, std::size_t index, const char* split) {
    std::vector<unsigned char> raw;
    raw.reserve(s.image.size() * 8);
    for (double v : s.image.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) raw.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
    nlohmann::json kps = nlohmann::json::array();
    for (const auto& k : s.keypoints) kps.push_back({k.x, k.y, k.visible ? 1 : 0});
    nlohmann::json j = {{"dataset", dataset.config.name},
                        {"split", split},
                        {"index", index},
                        {"image_shape", {dataset.config.image.rows, dataset.config.image.cols}},
                        {"image_f64le_base64", base64_encode(raw)},
                        {"keypoint_names", dataset.config.schema.names()},
                        {"keypoints", kps},
                        {"person_count", s.person_count},
                        {"figure_scale", s.figure_scale},
                        {"area", s.area}};
    out << j.dump() << '\n';
  };
  for (std::size_t i = 0; i < dataset.train.size(); ++i) emit(dataset.train[i], i, "train");
  for (std::size_t i = 0; i < dataset.val.size(); ++i) emit(dataset.val[i], dataset.train.size() + i, "val");
}

}  // namespace posecl
