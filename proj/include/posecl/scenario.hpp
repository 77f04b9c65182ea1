#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "posecl/schema.hpp"
#include "posecl/synth.hpp"

namespace posecl {

/// One experience of a scenario: its data, where its keypoints live in the
/// cumulative schema, and the cumulative schema itself.
struct ScenarioStep {
  Dataset dataset;
  SchemaMapping mapping;
  KeypointSchema cumulative;
};

/// Folds schema_union over the dataset schemas in order. SpecError when empty.
std::vector<ScenarioStep> build_scenario(std::span<const SyntheticDatasetConfig> configs);

/// Cumulative schema only, without generating any scenes.
std::vector<KeypointSchema> cumulative_schemas(std::span<const SyntheticDatasetConfig> configs);

/// Synthetic stand-ins for COCO (standing poses, AP), MPII (reaching poses,
/// PCK) and CrowdPose (crouching poses, 2-4 people, 30% occlusion, AP).
std::vector<SyntheticDatasetConfig> reference_datasets(std::uint64_t seed);

/// Body-26 stand-in appended as a fourth experience.
SyntheticDatasetConfig halpe_dataset(std::uint64_t seed);

/// JSON-lines fixture export: one object per scene with the image as
/// base64-encoded little-endian float64 values.
void export_fixtures(const Dataset& dataset, std::ostream& out);

std::string base64_encode(std::span<const unsigned char> bytes);

}  // namespace posecl
