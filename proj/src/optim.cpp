#include "posecl/optim.hpp"

#include <cmath>

#include "posecl/errors.hpp"

namespace posecl {

void adamw_step(std::span<const ParamRef> params, const GradientMap& grads, AdamWState& state,
                const AdamWConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("learning rate must be positive");

  for (const auto& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) throw RegistryError("no gradient for parameter " + p.name);
    if (it->second.shape() != p.value->shape())
      throw DimensionError("gradient for " + p.name + " has shape " + shape_str(it->second.shape()) +
                           ", parameter has " + shape_str(p.value->shape()));
    if (!it->second.all_finite())
      throw NumericError("non-finite gradient in layer " + p.layer + " (" + p.name + ")");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);

  for (const auto& p : params) {
    if (!p.trainable) continue;
    const Tensor& g = grads.at(p.name);
    Tensor& theta = *p.value;
    auto& m = state.m.try_emplace(p.name, theta.shape(), 0.0).first->second;
    auto& v = state.v.try_emplace(p.name, theta.shape(), 0.0).first->second;
    if (m.shape() != theta.shape()) {
      m = Tensor(theta.shape(), 0.0);
      v = Tensor(theta.shape(), 0.0);
    }
    const double decay = 1.0 - config.lr * config.weight_decay;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] = theta[i] * decay - config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace posecl
