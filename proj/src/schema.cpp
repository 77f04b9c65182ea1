#include "posecl/schema.hpp"

#include <set>

#include <json.hpp>

#include "posecl/errors.hpp"

namespace posecl {

KeypointSchema::KeypointSchema(std::string id, std::vector<std::string> names)
    : id_(std::move(id)), names_(std::move(names)) {
  if (names_.empty()) throw SchemaError("schema " + id_ + " has no keypoints");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw SchemaError("schema " + id_ + " has an empty keypoint name");
    if (!seen.insert(n).second) throw SchemaError("schema " + id_ + " repeats keypoint " + n);
  }
}

std::optional<std::size_t> KeypointSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

SchemaMapping map_into(const KeypointSchema& source, const KeypointSchema& target) {
  SchemaMapping m{source, target, {}, {}};
  for (const auto& n : source.names()) {
    auto idx = target.index_of(n);
    if (!idx) throw SchemaError("keypoint " + n + " of " + source.id() + " is unknown to " + target.id());
    m.index_map.push_back(*idx);
  }
  return m;
}

SchemaUnion schema_union(const KeypointSchema& prior, const KeypointSchema& incoming) {
  std::vector<std::string> names = prior.names();
  std::vector<std::size_t> fresh;
  for (const auto& n : incoming.names())
    if (!prior.contains(n)) {
      fresh.push_back(names.size());
      names.push_back(n);
    }
  std::string id = fresh.empty() ? prior.id() : prior.id() + "+" + incoming.id();
  KeypointSchema joined(std::move(id), std::move(names));
  SchemaUnion u{joined, map_into(prior, joined), map_into(incoming, joined)};
  u.prior.new_indices = fresh;
  u.incoming.new_indices = fresh;
  return u;
}

KeypointSchema load_coco_schema(std::string_view annotation_json, std::string id) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(annotation_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("annotation JSON is malformed at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("categories") || !doc["categories"].is_array())
    throw SchemaError("annotation has no categories array");
  for (const auto& cat : doc["categories"]) {
    if (!cat.is_object() || !cat.contains("keypoints")) continue;
    const auto& kps = cat["keypoints"];
    if (!kps.is_array()) throw SchemaError("categories[].keypoints must be an array of strings");
    std::vector<std::string> names;
    for (const auto& k : kps) {
      if (!k.is_string()) throw SchemaError("categories[].keypoints must be an array of strings");
      names.push_back(k.get<std::string>());
    }
    if (cat.contains("name") && cat["name"].is_string() && id == "coco_file") id = cat["name"].get<std::string>();
    return KeypointSchema(std::move(id), std::move(names));
  }
  throw SchemaError("no category carries a keypoints field");
}

namespace {

const std::vector<std::string> kCoco17 = {
    "nose",        "left_eye",       "right_eye",  "left_ear",    "right_ear",  "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip",
    "right_hip",   "left_knee",      "right_knee", "left_ankle",  "right_ankle"};

// MPII order, with names aligned to the COCO vocabulary.
const std::vector<std::string> kMpii16 = {
    "right_ankle", "right_knee", "right_hip",      "left_hip",       "left_knee",  "left_ankle",
    "pelvis",      "thorax",     "upper_neck",     "head_top",       "right_wrist", "right_elbow",
    "right_shoulder", "left_shoulder", "left_elbow", "left_wrist"};

// CrowdPose order; its "top_head" and "neck" are MPII's head_top and upper_neck.
const std::vector<std::string> kCrowdPose14 = {
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hip",      "right_hip",      "left_knee",  "right_knee",  "left_ankle", "right_ankle",
    "head_top",      "upper_neck"};

// Body-26 layout: the 21 names above plus the neck base and four foot points.
const std::vector<std::string> kHalpe26 = {
    "nose",          "left_eye",       "right_eye",   "left_ear",     "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow",  "right_elbow",  "left_wrist",
    "right_wrist",   "left_hip",       "right_hip",   "left_knee",    "right_knee",
    "left_ankle",    "right_ankle",    "head_top",    "upper_neck",   "pelvis",
    "thorax",        "neck",           "left_big_toe", "right_big_toe", "left_heel",
    "right_heel"};

}  // namespace

bool is_builtin_schema(std::string_view id) {
  return id == "coco17" || id == "mpii16" || id == "crowdpose14" || id == "halpe26";
}

KeypointSchema builtin_schema(std::string_view id) {
  if (id == "coco17") return KeypointSchema("coco17", kCoco17);
  if (id == "mpii16") return KeypointSchema("mpii16", kMpii16);
  if (id == "crowdpose14") return KeypointSchema("crowdpose14", kCrowdPose14);
  if (id == "halpe26") return KeypointSchema("halpe26", kHalpe26);
  throw SchemaError("unknown built-in schema " + std::string(id));
}

const std::vector<std::string>& skeleton_joint_names() { return kHalpe26; }

}  // namespace posecl
