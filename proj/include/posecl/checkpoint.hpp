#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "posecl/fisher.hpp"
#include "posecl/model.hpp"
#include "posecl/schema.hpp"

namespace posecl {

/// Everything needed to resume from or evaluate a trained experience.
struct Checkpoint {
  Model model;
  KeypointSchema schema;  // cumulative schema the head predicts
  int experience = 0;
  std::optional<FisherState> fisher;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all integers and floats little-endian:
/// magic "POSECLCK", u32 version, i32 experience, schema id and names,
/// grid, layer specs, then (name, shape, float64 values) per parameter and
/// an optional Fisher block.
std::string encode_checkpoint(const Checkpoint& ckpt);
/// FormatError with the byte offset on truncation or corruption.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// IoError when unreadable, FormatError when malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace posecl
