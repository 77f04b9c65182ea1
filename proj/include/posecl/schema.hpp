#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace posecl {

/// Ordered set of keypoint names; the order is the heatmap channel order.
class KeypointSchema {
 public:
  KeypointSchema() = default;
  /// Throws SchemaError on empty or duplicate names.
  KeypointSchema(std::string id, std::vector<std::string> names);

  const std::string& id() const noexcept { return id_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  bool contains(std::string_view name) const { return index_of(name).has_value(); }

  friend bool operator==(const KeypointSchema& a, const KeypointSchema& b) { return a.names_ == b.names_; }

 private:
  std::string id_;
  std::vector<std::string> names_;
};

/// Where each keypoint of `source` lives in the cumulative `target` schema.
struct SchemaMapping {
  KeypointSchema source;
  KeypointSchema target;
  std::vector<std::size_t> index_map;    // source slot -> target channel
  std::vector<std::size_t> new_indices;  // target channels absent from every prior schema
};

struct SchemaUnion {
  KeypointSchema schema;
  SchemaMapping prior;
  SchemaMapping incoming;
};

/// Prior channels keep their order; names new to the union are appended in
/// the incoming schema's order.
SchemaUnion schema_union(const KeypointSchema& prior, const KeypointSchema& incoming);

/// Mapping of `source` into an existing `target`; SchemaError if a name is missing.
SchemaMapping map_into(const KeypointSchema& source, const KeypointSchema& target);

/// Reads the keypoint list of the first category that has one from a
/// COCO-format annotation document.
KeypointSchema load_coco_schema(std::string_view annotation_json, std::string id = "coco_file");

/// Built-in schemas: "coco17", "mpii16", "crowdpose14", "halpe26".
KeypointSchema builtin_schema(std::string_view id);
bool is_builtin_schema(std::string_view id);

/// Every joint name the synthetic figure generator can place.
const std::vector<std::string>& skeleton_joint_names();

}  // namespace posecl
