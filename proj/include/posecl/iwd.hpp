#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "posecl/autograd.hpp"
#include "posecl/fisher.hpp"
#include "posecl/model.hpp"

namespace posecl {

/// Per-layer distillation temperatures derived from layer importance.
struct LayerTemperatures {
  std::map<std::string, double> tau;
  double base_tau = 2.0;
  std::map<std::string, double> raw_importance;         // F_l as estimated
  std::map<std::string, double> normalized_importance;  // F_l / mean of the positive F_l
};

struct TemperatureClamp {
  double min = 0.25;
  double max = 16.0;

  friend bool operator==(const TemperatureClamp&, const TemperatureClamp&) = default;
};

/// tau_l = tau / F_hat_l with F_hat the layer importance rescaled to mean 1
/// over layers whose importance is positive, clamped to [min, max].
/// Layers with zero importance get the upper bound.
LayerTemperatures layer_temperatures(const FisherState& fisher, double tau, TemperatureClamp clamp = {});

/// How the output layer's logits are turned into distributions.
enum class HeadSoftmaxDomain {
  per_channel,  // one spatial distribution per old keypoint channel
  flatten,      // one distribution over all old-channel cells of a sample
};

struct IwdLayerSpec {
  std::vector<std::size_t> old_channels;  // channels of the output layer known to the teacher
  std::size_t cells = 0;                  // heatmap cells per channel
  HeadSoftmaxDomain head_domain = HeadSoftmaxDomain::per_channel;
};

/// Layer-wise distillation: for every layer listed in `temps`, KL(teacher || student)
/// between temperature softmaxes of the layer outputs, times tau_l^2, averaged
/// over layers and samples. Intermediate outputs are flattened per sample;
/// the output layer is compared on old channels only.
Var iwd_penalty(const TapeTrace& student, const ForwardTrace& teacher, const std::string& output_layer,
                const LayerTemperatures& temps, const IwdLayerSpec& spec);

/// L_reg = lwf_term + lambda_iwd * iwd_term.
Var iwd_regularizer(Var lwf_term, Var iwd_term, double lambda_iwd);

}  // namespace posecl
