#pragma once

#include <map>
#include <span>
#include <string>

#include "posecl/autograd.hpp"
#include "posecl/tensor.hpp"

namespace posecl {

/// Mutable view of one model parameter, as handed to the optimizer.
struct ParamRef {
  std::string name;
  std::string layer;
  Tensor* value = nullptr;
  bool trainable = true;
};

struct AdamWConfig {
  double lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct AdamWState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  long step = 0;
};

/// One decoupled-weight-decay Adam step. Frozen parameters are left alone
/// (no decay, no moment update). Throws NumericError naming the layer if any
/// gradient is non-finite; in that case nothing is modified.
void adamw_step(std::span<const ParamRef> params, const GradientMap& grads, AdamWState& state,
                const AdamWConfig& config);

}  // namespace posecl
