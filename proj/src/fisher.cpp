#include "posecl/fisher.hpp"

#include "posecl/errors.hpp"

namespace posecl {

FisherState fisher_per_param(const Model& model, std::size_t sample_count, const SampleLoss& loss,
                             std::size_t max_samples) {
  if (sample_count == 0) throw DataError("Fisher estimation needs a nonempty dataset");
  if (max_samples == 0) throw ConfigError("fisher max_samples must be at least 1");
  const std::size_t n = std::min(sample_count, max_samples);

  FisherState state;
  for (const auto& [name, value] : model.parameter_values()) state.per_param.emplace(name, Tensor(value.shape(), 0.0));

  for (std::size_t i = 0; i < n; ++i) {
    Tape tape;
    Var l = loss(model, tape, i);
    const auto grads = tape.backward(l);
    for (auto& [name, acc] : state.per_param) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k] * g[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& [_, acc] : state.per_param)
    for (auto& v : acc.values()) v *= inv;
  state.sample_count = n;
  return state;
}

FisherState fisher_per_param(const Model& model, std::span<const Scene> scenes, const SchemaMapping& mapping,
                             double sigma, std::size_t max_samples) {
  if (mapping.target.size() != model.keypoint_count())
    throw SchemaError("mapping targets " + std::to_string(mapping.target.size()) + " channels, model has " +
                      std::to_string(model.keypoint_count()));
  const HeatmapGrid grid = model.grid();
  return fisher_per_param(
      model, scenes.size(),
      [&](const Model& m, Tape& tape, std::size_t i) {
        const Scene* one[] = {&scenes[i]};
        Batch b = make_batch(one, mapping, grid, sigma);
        auto trace = forward(m, tape, b.input);
        return sum(mul_const(square(sub(sigmoid(trace.logits), tape.constant(b.targets))), b.mask));
      },
      max_samples);
}

FisherState fisher_per_layer(FisherState fisher, const Model& model) {
  fisher.per_layer.clear();
  for (const auto& l : model.layers()) fisher.per_layer[l.spec.name] = 0.0;
  for (const auto& [name, imp] : fisher.per_param) {
    const std::string& layer = model.layer_of(name);
    double s = 0.0;
    for (double v : imp.values()) s += v;
    fisher.per_layer[layer] += s;
  }
  return fisher;
}

namespace {

Tensor embed_leading(const Tensor& small, const Shape& shape, const std::string& name) {
  if (small.shape() == shape) return small;
  const bool ok = small.rank() == shape.size() &&
                  ((shape.size() == 1 && small.dim(0) <= shape[0]) ||
                   (shape.size() == 2 && small.dim(0) == shape[0] && small.dim(1) <= shape[1]));
  if (!ok)
    throw RegistryError("importance for " + name + " has shape " + shape_str(small.shape()) +
                        ", incompatible with " + shape_str(shape));
  Tensor out(shape, 0.0);
  const std::size_t rows = shape.size() == 1 ? 1 : shape[0];
  const std::size_t sc = small.shape().back(), bc = shape.back();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < sc; ++c) out[r * bc + c] = small[r * sc + c];
  return out;
}

}  // namespace

FisherState ewc_online_update(const FisherState& acc, const FisherState& fresh, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (acc.per_param.size() != fresh.per_param.size())
    throw RegistryError("Fisher registries differ in size");
  FisherState out;
  for (const auto& [name, f_new] : fresh.per_param) {
    auto it = acc.per_param.find(name);
    if (it == acc.per_param.end()) throw RegistryError("accumulated Fisher lacks parameter " + name);
    Tensor prev = embed_leading(it->second, f_new.shape(), name);
    Tensor sum(f_new.shape(), 0.0);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] = gamma * prev[k] + f_new[k];
    out.per_param.emplace(name, std::move(sum));
  }
  for (const auto& [layer, v] : fresh.per_layer) {
    auto it = acc.per_layer.find(layer);
    out.per_layer[layer] = gamma * (it == acc.per_layer.end() ? 0.0 : it->second) + v;
  }
  out.sample_count = acc.sample_count + fresh.sample_count;
  return out;
}

}  // namespace posecl
