#include "posecl/metrics.hpp"

#include <cmath>

#include "posecl/errors.hpp"

namespace posecl {

std::vector<Point> decode_keypoints(std::span<const double> logits, std::size_t keypoints, HeatmapGrid grid) {
  const std::size_t cells = grid.cells();
  if (logits.size() != keypoints * cells)
    throw DimensionError("decode_keypoints: " + std::to_string(logits.size()) + " logits for " +
                         std::to_string(keypoints) + " channels of " + std::to_string(cells) + " cells");
  std::vector<Point> out(keypoints);
  for (std::size_t k = 0; k < keypoints; ++k) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cells; ++c)
      if (logits[k * cells + c] > logits[k * cells + best]) best = c;
    const auto row = best / grid.cols, col = best % grid.cols;
    out[k] = {(static_cast<double>(col) + 0.5) / static_cast<double>(grid.cols),
              (static_cast<double>(row) + 0.5) / static_cast<double>(grid.rows)};
  }
  return out;
}

Predictions predict(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                    const KeypointSchema& dataset_schema) {
  if (model_schema.size() != model.keypoint_count())
    throw SchemaError("model predicts " + std::to_string(model.keypoint_count()) + " keypoints but its schema has " +
                      std::to_string(model_schema.size()));
  const SchemaMapping mapping = map_into(dataset_schema, model_schema);
  Predictions out;
  if (scenes.empty()) return out;
  const std::size_t pixels = scenes.front().image.size();
  Tensor input(Shape{scenes.size(), pixels}, 0.0);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].image.size() != pixels) throw DimensionError("scenes differ in image size");
    std::copy(scenes[i].image.values().begin(), scenes[i].image.values().end(), &input.values()[i * pixels]);
  }
  const Tensor logits = forward(model, input, false).logits;
  const std::size_t width = model.keypoint_count() * model.grid().cells();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto all = decode_keypoints(logits.values().subspan(i * width, width), model.keypoint_count(), model.grid());
    std::vector<Point> mine;
    mine.reserve(mapping.index_map.size());
    for (auto channel : mapping.index_map) mine.push_back(all[channel]);
    out.push_back(std::move(mine));
  }
  return out;
}

namespace {

void check_aligned(std::span<const Scene> scenes, const Predictions& predictions) {
  if (scenes.size() != predictions.size())
    throw DimensionError("predictions for " + std::to_string(predictions.size()) + " of " +
                         std::to_string(scenes.size()) + " scenes");
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (scenes[i].keypoints.size() != predictions[i].size())
      throw DimensionError("scene " + std::to_string(i) + " has " + std::to_string(scenes[i].keypoints.size()) +
                           " keypoints but " + std::to_string(predictions[i].size()) + " predictions");
}

}  // namespace

double pck_score(std::span<const Scene> scenes, const Predictions& predictions, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("PCK alpha must be positive");
  check_aligned(scenes, predictions);
  std::size_t visible = 0, correct = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const double limit = alpha * scenes[i].figure_scale;
    for (std::size_t k = 0; k < scenes[i].keypoints.size(); ++k) {
      const auto& gt = scenes[i].keypoints[k];
      if (!gt.visible) continue;
      ++visible;
      if (std::hypot(predictions[i][k].x - gt.x, predictions[i][k].y - gt.y) <= limit) ++correct;
    }
  }
  return visible ? 100.0 * static_cast<double>(correct) / static_cast<double>(visible) : 0.0;
}

std::optional<double> object_keypoint_similarity(const Scene& scene, std::span<const Point> prediction,
                                                 std::span<const double> sigmas) {
  if (prediction.size() != scene.keypoints.size() || sigmas.size() != scene.keypoints.size())
    throw DimensionError("OKS needs one prediction and one sigma per keypoint");
  const double s = std::sqrt(scene.area);
  double total = 0.0;
  std::size_t visible = 0;
  for (std::size_t k = 0; k < scene.keypoints.size(); ++k) {
    const auto& gt = scene.keypoints[k];
    if (!gt.visible) continue;
    if (!(sigmas[k] > 0.0)) throw ConfigError("OKS sigmas must be positive");
    const double dx = prediction[k].x - gt.x, dy = prediction[k].y - gt.y;
    const double kappa = 2.0 * sigmas[k];
    total += std::exp(-(dx * dx + dy * dy) / (2.0 * s * s * kappa * kappa));
    ++visible;
  }
  if (visible == 0) return std::nullopt;
  return total / static_cast<double>(visible);
}

double average_precision(std::span<const std::optional<double>> oks) {
  std::size_t figures = 0;
  for (const auto& v : oks) figures += v.has_value();
  if (figures == 0) return 0.0;
  double acc = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double threshold = static_cast<double>(50 + 5 * t) / 100.0;
    std::size_t pass = 0;
    for (const auto& v : oks) pass += v.has_value() && *v >= threshold;
    acc += static_cast<double>(pass) / static_cast<double>(figures);
  }
  return 100.0 * acc / 10.0;
}

double oks_ap_score(std::span<const Scene> scenes, const Predictions& predictions, std::span<const double> sigmas) {
  check_aligned(scenes, predictions);
  std::vector<std::optional<double>> oks;
  oks.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (sigmas.empty()) {
      const std::vector<double> uniform(scenes[i].keypoints.size(), kDefaultOksSigma);
      oks.push_back(object_keypoint_similarity(scenes[i], predictions[i], uniform));
    } else {
      oks.push_back(object_keypoint_similarity(scenes[i], predictions[i], sigmas));
    }
  }
  return average_precision(oks);
}

double evaluate_pck(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                    const KeypointSchema& dataset_schema, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("PCK alpha must be positive");
  return pck_score(scenes, predict(model, model_schema, scenes, dataset_schema), alpha);
}

double evaluate_oks_ap(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                       const KeypointSchema& dataset_schema, std::span<const double> sigmas) {
  if (!sigmas.empty() && sigmas.size() != dataset_schema.size())
    throw ConfigError("expected " + std::to_string(dataset_schema.size()) + " OKS sigmas, got " +
                      std::to_string(sigmas.size()));
  return oks_ap_score(scenes, predict(model, model_schema, scenes, dataset_schema), sigmas);
}

double evaluate_metric(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                       const KeypointSchema& dataset_schema, const std::string& metric) {
  if (metric == "pck") return evaluate_pck(model, model_schema, scenes, dataset_schema);
  if (metric == "ap") return evaluate_oks_ap(model, model_schema, scenes, dataset_schema);
  throw ConfigError("unknown metric " + metric + " (expected pck or ap)");
}

}  // namespace posecl
