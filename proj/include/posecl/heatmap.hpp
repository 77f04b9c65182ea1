#pragma once

#include <span>
#include <vector>

#include "posecl/model.hpp"
#include "posecl/schema.hpp"
#include "posecl/synth.hpp"

namespace posecl {

struct HeatmapTargets {
  Tensor targets;  // [K_union x Hg x Wg]
  Tensor mask;     // [K_union]
};

/// Grid cell containing a normalized coordinate, clamped to the grid.
std::pair<std::size_t, std::size_t> keypoint_cell(double x, double y, HeatmapGrid grid);

/// Each visible keypoint becomes an unnormalized Gaussian exp(-d^2 / 2 sigma^2)
/// (d in cell units) peaking at 1.0 on the centre of the cell that contains it.
/// Invisible keypoints and union channels the dataset lacks get zero maps and mask 0.
HeatmapTargets encode_heatmaps(const Scene& scene, const SchemaMapping& mapping, HeatmapGrid grid, double sigma);

/// A batch of scenes as model input [B x pixels], targets [B x K*cells] and an
/// elementwise mask of the same shape.
struct Batch {
  Tensor input;
  Tensor targets;
  Tensor mask;
};

Batch make_batch(std::span<const Scene* const> scenes, const SchemaMapping& mapping, HeatmapGrid grid, double sigma);

}  // namespace posecl
