#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posecl/model.hpp"
#include "posecl/schema.hpp"
#include "posecl/synth.hpp"

namespace posecl {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Centre of the argmax cell of every channel of one sample's logits
/// ([K * cells], channel-major), in normalized coordinates.
std::vector<Point> decode_keypoints(std::span<const double> logits, std::size_t keypoints, HeatmapGrid grid);

/// Predicted locations for every scene, one entry per slot of the dataset schema.
using Predictions = std::vector<std::vector<Point>>;

/// Runs the model on the scenes and picks the channels of `dataset_schema`
/// out of `model_schema`. SchemaError if the dataset has keypoints the model lacks.
Predictions predict(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                    const KeypointSchema& dataset_schema);

/// 100 * correct / visible, where a visible keypoint is correct when its
/// prediction lies within alpha * figure_scale. 0 when nothing is visible.
double pck_score(std::span<const Scene> scenes, const Predictions& predictions, double alpha);

/// Mean over visible keypoints of exp(-d^2 / (2 s^2 (2 sigma_j)^2)) with
/// s^2 the figure area, as in the COCO evaluation. Empty when the figure has no visible keypoint.
std::optional<double> object_keypoint_similarity(const Scene& scene, std::span<const Point> prediction,
                                                 std::span<const double> sigmas);

/// Mean over thresholds 0.50, 0.55, ..., 0.95 of the fraction of figures whose
/// OKS is at least the threshold, times 100. Figures without a value are skipped.
double average_precision(std::span<const std::optional<double>> oks);

double oks_ap_score(std::span<const Scene> scenes, const Predictions& predictions, std::span<const double> sigmas);

inline constexpr double kDefaultPckAlpha = 0.5;
inline constexpr double kDefaultOksSigma = 0.08;

double evaluate_pck(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                    const KeypointSchema& dataset_schema, double alpha = kDefaultPckAlpha);

/// Empty `sigmas` means kDefaultOksSigma for every keypoint.
double evaluate_oks_ap(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                       const KeypointSchema& dataset_schema, std::span<const double> sigmas = {});

/// Dispatches on "pck" or "ap".
double evaluate_metric(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                       const KeypointSchema& dataset_schema, const std::string& metric);

}  // namespace posecl
