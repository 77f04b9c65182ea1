#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posecl/autograd.hpp"
#include "posecl/fisher.hpp"
#include "posecl/iwd.hpp"
#include "posecl/model.hpp"

namespace posecl {

enum class StrategyKind { finetune, ewc_separate, ewc_online, lfl, lwf, iwd };
enum class Modifier { progressive_unfreeze, time_scaled_lambda, teacher_output_scaling };

std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy_kind(std::string_view name);
std::string_view to_string(Modifier m);
Modifier parse_modifier(std::string_view name);

/// Regularization weight each strategy uses unless configured otherwise.
double default_lambda(StrategyKind kind);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::finetune;
  double lambda = 0.0;
  double tau = 2.0;
  double gamma = 0.7;
  double lambda_iwd = 1.0;
  std::set<Modifier> modifiers;
  TemperatureClamp temperature_clamp{};
  std::size_t fisher_max_samples = 512;
  HeadSoftmaxDomain iwd_head_domain = HeadSoftmaxDomain::per_channel;

  static StrategyConfig defaults(StrategyKind kind);
  void validate() const;
  bool has(Modifier m) const { return modifiers.contains(m); }
  bool needs_fisher() const;

  friend bool operator==(const StrategyConfig&, const StrategyConfig&) = default;
};

/// Parameters of a past model and their importances, one EWC anchor.
struct EwcAnchor {
  std::map<std::string, Tensor> params;
  FisherState fisher;
};

/// Everything an experience after the first needs from the past.
struct RegContext {
  Snapshot teacher;
  std::vector<EwcAnchor> ewc;        // one per past experience (separate) or one (online)
  std::optional<FisherState> fisher;  // Fisher of the teacher on its last dataset
  LayerTemperatures temperatures;
  std::vector<std::size_t> old_channels;
};

/// (1 - lambda) * kpt + lambda * reg; ConfigError when lambda is outside [0, 1].
Var total_loss(Var kpt_loss, Var reg_loss, double lambda);

/// Masked MSE between sigmoid(logits) and Gaussian targets. Logits may be
/// [B x K*cells] or [B x K x Hg x Wg]; targets and mask are [B x K*cells].
Var keypoint_loss(Var pred_logits, const Tensor& targets, const Tensor& mask);

/// sum_k F_k (theta_k - anchor_k)^2 over every parameter in `fisher`.
/// Parameters that grew since the anchor are compared on their leading block.
Var ewc_penalty(const std::map<std::string, Var>& current, const std::map<std::string, Tensor>& anchor,
                const FisherState& fisher);
/// Separate mode: the sum of one penalty per stored anchor.
Var ewc_penalty(const std::map<std::string, Var>& current, std::span<const EwcAnchor> anchors);

/// sum over the batch of ||f_prev - f_cur||^2.
Var lfl_penalty(Var features_cur, const Tensor& features_prev);

/// Sum over rows of KL(softmax(teacher / tau) || softmax(student / tau)) * tau^2.
Var distill_rows(Var student_rows, const Tensor& teacher_rows, double tau);

/// Spatial-softmax distillation on the teacher's channels, averaged over
/// batch x old channels. Student logits are [B x K'*cells], teacher [B x K*cells]
/// (or [B x K x Hg x Wg]).
Var lwf_penalty(Var logits_cur, const Tensor& logits_prev, std::span<const std::size_t> old_channels,
                std::size_t cells, double tau);

/// Per-epoch effect of the configured modifiers.
struct EffectiveSettings {
  double lambda = 0.0;
  std::set<std::string> trainable;                // parametrised layers allowed to update
  std::map<std::string, double> teacher_scales;   // empty unless teacher_output_scaling
};

EffectiveSettings apply_modifiers(const StrategyConfig& config, int epoch, int total_epochs, const Model& model,
                                  const LayerTemperatures* importance);

/// Strategy-specific L_reg for one batch. `student` must come from a
/// non-frozen forward pass on the same tape.
Var regularization_loss(const StrategyConfig& config, const RegContext& ctx, const Model& model, Tape& tape,
                        const TapeTrace& student, const ForwardTrace& teacher);

}  // namespace posecl
