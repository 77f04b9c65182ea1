#include "posecl/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "posecl/errors.hpp"

namespace posecl {

std::pair<std::size_t, std::size_t> keypoint_cell(double x, double y, HeatmapGrid grid) {
  auto clampi = [](double v, std::size_t n) {
    const double f = std::floor(v * static_cast<double>(n));
    if (f < 0.0) return std::size_t{0};
    return std::min(static_cast<std::size_t>(f), n - 1);
  };
  return {clampi(y, grid.rows), clampi(x, grid.cols)};
}

HeatmapTargets encode_heatmaps(const Scene& scene, const SchemaMapping& mapping, HeatmapGrid grid, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("heatmap sigma must be positive");
  if (scene.keypoints.size() != mapping.index_map.size())
    throw SchemaError("scene has " + std::to_string(scene.keypoints.size()) + " keypoints, mapping expects " +
                      std::to_string(mapping.index_map.size()));
  const std::size_t k = mapping.target.size();
  const std::size_t cells = grid.cells();
  HeatmapTargets out{Tensor(Shape{k, grid.rows, grid.cols}, 0.0), Tensor(Shape{k}, 0.0)};
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t slot = 0; slot < scene.keypoints.size(); ++slot) {
    const auto& kp = scene.keypoints[slot];
    if (!kp.visible) continue;
    const std::size_t ch = mapping.index_map[slot];
    const auto [row, col] = keypoint_cell(kp.x, kp.y, grid);
    const double cy = static_cast<double>(row) + 0.5, cx = static_cast<double>(col) + 0.5;
    out.mask[ch] = 1.0;
    for (std::size_t r = 0; r < grid.rows; ++r)
      for (std::size_t c = 0; c < grid.cols; ++c) {
        const double du = static_cast<double>(c) + 0.5 - cx;
        const double dv = static_cast<double>(r) + 0.5 - cy;
        out.targets[ch * cells + r * grid.cols + c] = std::exp(-(du * du + dv * dv) / denom);
      }
  }
  return out;
}

Batch make_batch(std::span<const Scene* const> scenes, const SchemaMapping& mapping, HeatmapGrid grid, double sigma) {
  if (scenes.empty()) throw DataError("empty batch");
  const std::size_t b = scenes.size();
  const std::size_t pixels = scenes.front()->image.size();
  const std::size_t width = mapping.target.size() * grid.cells();
  Batch batch{Tensor(Shape{b, pixels}, 0.0), Tensor(Shape{b, width}, 0.0), Tensor(Shape{b, width}, 0.0)};
  for (std::size_t i = 0; i < b; ++i) {
    const Scene& s = *scenes[i];
    if (s.image.size() != pixels) throw DimensionError("scenes in a batch must share an image size");
    std::copy(s.image.values().begin(), s.image.values().end(), &batch.input.values()[i * pixels]);
    auto enc = encode_heatmaps(s, mapping, grid, sigma);
    std::copy(enc.targets.values().begin(), enc.targets.values().end(), &batch.targets.values()[i * width]);
    for (std::size_t ch = 0; ch < mapping.target.size(); ++ch)
      if (enc.mask[ch] != 0.0)
        std::fill_n(&batch.mask.values()[i * width + ch * grid.cells()], grid.cells(), 1.0);
  }
  return batch;
}

}  // namespace posecl
