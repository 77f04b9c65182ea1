#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "posecl/autograd.hpp"
#include "posecl/optim.hpp"
#include "posecl/tensor.hpp"

namespace posecl {

enum class LayerKind { dense, activation };
enum class LayerGroup { backbone, head };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  LayerGroup group = LayerGroup::backbone;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct HeatmapGrid {
  std::size_t rows = 8;
  std::size_t cols = 8;

  std::size_t cells() const { return rows * cols; }
  friend bool operator==(const HeatmapGrid&, const HeatmapGrid&) = default;
};

/// A layer with its parameters. Activation layers (ReLU) carry none.
struct Layer {
  LayerSpec spec;
  Tensor weight;  // [in_dim x out_dim], dense only
  Tensor bias;    // [out_dim], dense only
  bool trainable = true;

  bool has_params() const { return spec.kind == LayerKind::dense; }
};

/// Backbone followed by a heatmap head. Output channel k occupies logits
/// columns [k * cells, (k + 1) * cells) in row-major (row, col) cell order.
class Model {
 public:
  Model(std::vector<Layer> layers, std::size_t keypoint_count, HeatmapGrid grid);

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t keypoint_count() const noexcept { return keypoints_; }
  HeatmapGrid grid() const noexcept { return grid_; }
  std::size_t input_dim() const { return layers_.front().spec.in_dim; }

  const Layer& layer(const std::string& name) const;
  Layer& layer(const std::string& name);
  /// Name of the last backbone layer: the feature output used by LFL.
  const std::string& feature_layer() const;
  /// Name of the final projection (the layer that head expansion widens).
  const std::string& output_layer() const { return layers_.back().spec.name; }

  std::vector<ParamRef> parameters();
  /// Copy of every parameter keyed by name.
  std::map<std::string, Tensor> parameter_values() const;
  /// Layer that owns the named parameter.
  const std::string& layer_of(const std::string& param_name) const;
  std::size_t parameter_count() const;

  void set_layer_trainable(const std::string& name, bool trainable);

 private:
  std::vector<Layer> layers_;
  std::size_t keypoints_;
  HeatmapGrid grid_;
};

/// Parameter-free view of the model used as a distillation teacher.
struct Snapshot {
  std::shared_ptr<const Model> model;
  int experience = 0;
};

/// Per-layer outputs recorded on a tape; logits are [batch x K*cells].
struct TapeTrace {
  std::vector<std::string> names;
  std::vector<Var> outputs;
  Var logits;
  std::map<std::string, Var> params;  // empty for frozen passes

  Var at(const std::string& name) const;
};

/// Plain-value trace; logits are [batch x K x Hg x Wg].
struct ForwardTrace {
  std::vector<std::string> names;
  std::vector<Tensor> outputs;
  Tensor logits;

  const Tensor& at(const std::string& name) const;
};

struct ForwardOptions {
  /// Record parameters as constants (teacher passes): nothing receives gradient.
  bool frozen = false;
  /// Multiplies each listed layer's output; the scaled value is recorded and feeds the next layer.
  const std::map<std::string, double>* layer_scales = nullptr;
};

std::vector<LayerSpec> reference_layers(std::size_t input_dim, std::span<const std::size_t> hidden,
                                        std::size_t keypoint_count, HeatmapGrid grid);

/// He-uniform weights, zero biases, drawn deterministically from rng_seed.
Model build_model(std::span<const LayerSpec> spec, std::size_t keypoint_count, HeatmapGrid grid,
                  std::uint64_t rng_seed);

/// Records a forward pass on `tape`. `input` is [batch x input_dim].
TapeTrace forward(const Model& model, Tape& tape, const Tensor& input, const ForwardOptions& options = {});

/// Value-only forward pass. With capture == false only the logits are kept.
ForwardTrace forward(const Model& model, const Tensor& input, bool capture = true,
                     const std::map<std::string, double>* layer_scales = nullptr);

ForwardTrace to_values(const TapeTrace& trace, const Model& model);

/// Widens the final projection to new_keypoint_count channels. Existing
/// columns are copied verbatim; new columns and biases are zero.
Model expand_head(const Model& model, std::size_t new_keypoint_count);

Snapshot snapshot(const Model& model, int experience = 0);
ForwardTrace forward(const Snapshot& snap, const Tensor& input, bool capture = true,
                     const std::map<std::string, double>* layer_scales = nullptr);

/// Parametrised layers in output-to-input order together with the epoch at
/// which each becomes trainable under progressive unfreezing:
/// ceil(position * total_epochs / count).
std::vector<std::pair<std::string, int>> unfreeze_schedule(const Model& model, int total_epochs);

}  // namespace posecl
