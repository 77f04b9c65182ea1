#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posecl/schema.hpp"
#include "posecl/tensor.hpp"

namespace posecl {

struct Keypoint {
  double x = 0.0;  // normalized, 0 = left edge
  double y = 0.0;  // normalized, 0 = top edge
  bool visible = false;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct ImageGrid {
  std::size_t rows = 8;
  std::size_t cols = 8;

  std::size_t pixels() const { return rows * cols; }
  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

/// One annotated figure (plus optional distractor figures) rasterized on a grid.
struct Scene {
  Tensor image;                   // [rows * cols] intensities
  std::vector<Keypoint> keypoints;  // one per slot of the dataset schema
  int person_count = 1;
  double figure_scale = 1.0;      // torso length (pelvis to thorax), the PCK reference length
  double area = 1.0;              // bounding-box area of the figure's joints, the OKS s^2

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Pose families for joint-angle sampling.
enum class PoseFamily { standing = 0, reaching = 1, crouching = 2, mixed = 3 };

struct SyntheticDatasetConfig {
  std::string name = "synthetic";
  KeypointSchema schema;
  std::size_t n_train = 384;
  std::size_t n_val = 128;
  std::pair<int, int> person_count_range{1, 1};
  double occlusion_rate = 0.05;
  int pose_distribution = 0;
  double noise_level = 0.05;
  /// Main-figure height as a fraction of the image, drawn uniformly.
  std::pair<double, double> figure_height{0.45, 0.85};
  std::uint64_t seed = 22;
  ImageGrid image{};
  /// Metric reported for this dataset in the metric matrix: "ap" or "pck".
  std::string metric = "ap";

  void validate() const;
  friend bool operator==(const SyntheticDatasetConfig&, const SyntheticDatasetConfig&) = default;
};

/// Deterministic in (config.seed, index). Indices [0, n_train) form the
/// training split, [n_train, n_train + n_val) the validation split.
Scene generate_scene(const SyntheticDatasetConfig& config, std::size_t index);

struct Dataset {
  SyntheticDatasetConfig config;
  std::vector<Scene> train;
  std::vector<Scene> val;
};

Dataset generate_dataset(const SyntheticDatasetConfig& config);

/// Joint positions of a figure in normalized image coordinates, keyed by name.
using JointMap = std::map<std::string, std::pair<double, double>>;

/// Anti-aliased limb rasterization of one figure, max-combined into `image`.
void rasterize_figure(const JointMap& joints, double height, ImageGrid grid, std::span<double> image);

}  // namespace posecl
