#include "posecl/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "posecl/errors.hpp"
#include "posecl/random.hpp"

namespace posecl {

namespace {

void validate(const std::vector<Layer>& layers, std::size_t keypoints, HeatmapGrid grid) {
  if (layers.empty()) throw SpecError("model needs at least one layer");
  if (keypoints == 0 || grid.cells() == 0) throw SpecError("keypoint count and heatmap grid must be positive");
  std::set<std::string> names;
  bool in_head = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& s = layers[i].spec;
    if (s.name.empty()) throw SpecError("layer " + std::to_string(i) + " has no name");
    if (!names.insert(s.name).second) throw SpecError("duplicate layer name " + s.name);
    if (s.in_dim == 0 || s.out_dim == 0) throw SpecError("layer " + s.name + " has a zero dimension");
    if (s.kind == LayerKind::activation && s.in_dim != s.out_dim)
      throw SpecError("activation layer " + s.name + " must keep its width");
    if (i > 0 && layers[i - 1].spec.out_dim != s.in_dim)
      throw SpecError("layers " + layers[i - 1].spec.name + " -> " + s.name + " do not chain: " +
                      std::to_string(layers[i - 1].spec.out_dim) + " != " + std::to_string(s.in_dim));
    if (s.group == LayerGroup::head) in_head = true;
    else if (in_head) throw SpecError("backbone layer " + s.name + " follows the head");
    if (s.kind == LayerKind::dense) {
      if (layers[i].weight.shape() != Shape{s.in_dim, s.out_dim} || layers[i].bias.shape() != Shape{s.out_dim})
        throw SpecError("parameters of " + s.name + " do not match its spec");
    }
  }
  const auto& last = layers.back().spec;
  if (!in_head) throw SpecError("model has no head layers");
  if (last.kind != LayerKind::dense) throw SpecError("final layer " + last.name + " must be dense");
  if (last.out_dim != keypoints * grid.cells())
    throw SpecError("head output " + std::to_string(last.out_dim) + " != K*Hg*Wg = " +
                    std::to_string(keypoints * grid.cells()));
}

}  // namespace

Model::Model(std::vector<Layer> layers, std::size_t keypoint_count, HeatmapGrid grid)
    : layers_(std::move(layers)), keypoints_(keypoint_count), grid_(grid) {
  validate(layers_, keypoints_, grid_);
}

const Layer& Model::layer(const std::string& name) const {
  for (const auto& l : layers_)
    if (l.spec.name == name) return l;
  throw LookupError("unknown layer " + name);
}

Layer& Model::layer(const std::string& name) {
  return const_cast<Layer&>(static_cast<const Model&>(*this).layer(name));
}

const std::string& Model::feature_layer() const {
  const std::string* last = nullptr;
  for (const auto& l : layers_)
    if (l.spec.group == LayerGroup::backbone) last = &l.spec.name;
  if (!last) throw LookupError("model has no backbone layers");
  return *last;
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  for (auto& l : layers_) {
    if (!l.has_params()) continue;
    out.push_back({l.spec.name + ".weight", l.spec.name, &l.weight, l.trainable});
    out.push_back({l.spec.name + ".bias", l.spec.name, &l.bias, l.trainable});
  }
  return out;
}

std::map<std::string, Tensor> Model::parameter_values() const {
  std::map<std::string, Tensor> out;
  for (const auto& l : layers_) {
    if (!l.has_params()) continue;
    out.emplace(l.spec.name + ".weight", l.weight);
    out.emplace(l.spec.name + ".bias", l.bias);
  }
  return out;
}

const std::string& Model::layer_of(const std::string& param_name) const {
  const auto dot = param_name.rfind('.');
  if (dot != std::string::npos) {
    const auto layer_name = param_name.substr(0, dot);
    const auto suffix = param_name.substr(dot + 1);
    for (const auto& l : layers_)
      if (l.spec.name == layer_name && l.has_params() && (suffix == "weight" || suffix == "bias"))
        return l.spec.name;
  }
  throw RegistryError("parameter " + param_name + " belongs to no layer");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    if (l.has_params()) n += l.weight.size() + l.bias.size();
  return n;
}

void Model::set_layer_trainable(const std::string& name, bool trainable) { layer(name).trainable = trainable; }

Var TapeTrace::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return outputs[i];
  throw RegistryError("trace has no layer " + name);
}

const Tensor& ForwardTrace::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return outputs[i];
  throw RegistryError("trace has no layer " + name);
}

std::vector<LayerSpec> reference_layers(std::size_t input_dim, std::span<const std::size_t> hidden,
                                        std::size_t keypoint_count, HeatmapGrid grid) {
  std::vector<LayerSpec> spec;
  std::size_t width = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const auto idx = std::to_string(i + 1);
    spec.push_back({"fc" + idx, LayerKind::dense, width, hidden[i], LayerGroup::backbone});
    spec.push_back({"relu" + idx, LayerKind::activation, hidden[i], hidden[i], LayerGroup::backbone});
    width = hidden[i];
  }
  spec.push_back({"head", LayerKind::dense, width, keypoint_count * grid.cells(), LayerGroup::head});
  return spec;
}

Model build_model(std::span<const LayerSpec> spec, std::size_t keypoint_count, HeatmapGrid grid,
                  std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& s = spec[i];
    if (i > 0 && spec[i - 1].out_dim != s.in_dim)
      throw SpecError("layers " + spec[i - 1].name + " -> " + s.name + " do not chain: " +
                      std::to_string(spec[i - 1].out_dim) + " != " + std::to_string(s.in_dim));
    Layer layer{s, Tensor(), Tensor(), true};
    if (s.kind == LayerKind::dense) {
      if (s.in_dim == 0 || s.out_dim == 0) throw SpecError("layer " + s.name + " has a zero dimension");
      layer.weight = Tensor(Shape{s.in_dim, s.out_dim}, 0.0);
      layer.bias = Tensor(Shape{s.out_dim}, 0.0);
      const double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim));
      for (auto& w : layer.weight.values()) w = rng.uniform(-bound, bound);
    }
    layers.push_back(std::move(layer));
  }
  return Model(std::move(layers), keypoint_count, grid);
}

TapeTrace forward(const Model& model, Tape& tape, const Tensor& input, const ForwardOptions& options) {
  if (input.rank() != 2 || input.dim(1) != model.input_dim())
    throw DimensionError("forward: input " + shape_str(input.shape()) + " does not match model width " +
                         std::to_string(model.input_dim()));
  TapeTrace trace;
  Var x = tape.constant(input);
  for (const auto& l : model.layers()) {
    if (l.spec.kind == LayerKind::dense) {
      Var w = options.frozen ? tape.constant(l.weight) : tape.parameter(l.spec.name + ".weight", l.weight);
      Var b = options.frozen ? tape.constant(l.bias) : tape.parameter(l.spec.name + ".bias", l.bias);
      if (!options.frozen) {
        trace.params.emplace(l.spec.name + ".weight", w);
        trace.params.emplace(l.spec.name + ".bias", b);
      }
      x = add_bias(matmul(x, w), b);
    } else {
      x = relu(x);
    }
    if (options.layer_scales) {
      auto it = options.layer_scales->find(l.spec.name);
      if (it != options.layer_scales->end()) x = scale(x, it->second);
    }
    trace.names.push_back(l.spec.name);
    trace.outputs.push_back(x);
  }
  trace.logits = trace.outputs.back();
  return trace;
}

ForwardTrace to_values(const TapeTrace& trace, const Model& model) {
  ForwardTrace out;
  out.names = trace.names;
  for (const auto& v : trace.outputs) out.outputs.push_back(v.value());
  const auto batch = trace.logits.value().dim(0);
  out.logits = trace.logits.value().reshaped(
      Shape{batch, model.keypoint_count(), model.grid().rows, model.grid().cols});
  return out;
}

ForwardTrace forward(const Model& model, const Tensor& input, bool capture,
                     const std::map<std::string, double>* layer_scales) {
  Tape tape;
  ForwardOptions opts;
  opts.frozen = true;
  opts.layer_scales = layer_scales;
  auto trace = forward(model, tape, input, opts);
  if (capture) return to_values(trace, model);
  ForwardTrace out;
  const auto batch = input.dim(0);
  out.logits = trace.logits.value().reshaped(
      Shape{batch, model.keypoint_count(), model.grid().rows, model.grid().cols});
  return out;
}

Model expand_head(const Model& model, std::size_t new_keypoint_count) {
  const std::size_t old_k = model.keypoint_count();
  if (new_keypoint_count <= old_k)
    throw ExpansionError("head expansion needs more keypoints: " + std::to_string(new_keypoint_count) +
                         " <= " + std::to_string(old_k));
  std::vector<Layer> layers = model.layers();
  Layer& head = layers.back();
  const std::size_t in = head.spec.in_dim;
  const std::size_t old_out = head.spec.out_dim;
  const std::size_t new_out = new_keypoint_count * model.grid().cells();
  Tensor w(Shape{in, new_out}, 0.0);
  Tensor b(Shape{new_out}, 0.0);
  for (std::size_t r = 0; r < in; ++r)
    std::copy_n(&head.weight.values()[r * old_out], old_out, &w.values()[r * new_out]);
  std::copy_n(head.bias.values().begin(), old_out, b.values().begin());
  head.weight = std::move(w);
  head.bias = std::move(b);
  head.spec.out_dim = new_out;
  return Model(std::move(layers), new_keypoint_count, model.grid());
}

Snapshot snapshot(const Model& model, int experience) {
  return Snapshot{std::make_shared<const Model>(model), experience};
}

ForwardTrace forward(const Snapshot& snap, const Tensor& input, bool capture,
                     const std::map<std::string, double>* layer_scales) {
  return forward(*snap.model, input, capture, layer_scales);
}

std::vector<std::pair<std::string, int>> unfreeze_schedule(const Model& model, int total_epochs) {
  std::vector<std::string> order;
  for (auto it = model.layers().rbegin(); it != model.layers().rend(); ++it)
    if (it->has_params()) order.push_back(it->spec.name);
  std::vector<std::pair<std::string, int>> out;
  const int count = static_cast<int>(order.size());
  for (int pos = 0; pos < count; ++pos)
    out.emplace_back(order[pos], (pos * total_epochs + count - 1) / count);
  return out;
}

}  // namespace posecl
