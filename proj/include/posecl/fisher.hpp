#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "posecl/autograd.hpp"
#include "posecl/heatmap.hpp"
#include "posecl/model.hpp"
#include "posecl/schema.hpp"
#include "posecl/synth.hpp"

namespace posecl {

/// Diagonal Fisher importances: one tensor per parameter, one scalar per layer.
struct FisherState {
  std::map<std::string, Tensor> per_param;
  std::map<std::string, double> per_layer;
  std::size_t sample_count = 0;
};

/// Loss of a single sample recorded on `tape`, with `model`'s parameters as
/// named leaves.
using SampleLoss = std::function<Var(const Model& model, Tape& tape, std::size_t sample)>;

/// F_k = (1/N) sum_x (dL/dtheta_k)^2 over the first N = min(sample_count, max_samples)
/// samples, one sample per backward pass.
FisherState fisher_per_param(const Model& model, std::size_t sample_count, const SampleLoss& loss,
                             std::size_t max_samples);

/// Keypoint-loss Fisher on a set of scenes mapped into the model's channels.
FisherState fisher_per_param(const Model& model, std::span<const Scene> scenes, const SchemaMapping& mapping,
                             double sigma, std::size_t max_samples);

/// Fills per_layer[l] with the sum of every importance owned by layer l.
/// Parameter-free layers get 0.
FisherState fisher_per_layer(FisherState fisher, const Model& model);

/// F <- gamma * F_acc + F_new, per parameter. When a parameter grew (head
/// expansion) the accumulated tensor occupies its leading block.
FisherState ewc_online_update(const FisherState& acc, const FisherState& fresh, double gamma);

}  // namespace posecl
