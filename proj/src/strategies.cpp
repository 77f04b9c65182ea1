#include "posecl/strategies.hpp"

#include <cmath>

#include "posecl/errors.hpp"

namespace posecl {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::finetune: return "finetune";
    case StrategyKind::ewc_separate: return "ewc_separate";
    case StrategyKind::ewc_online: return "ewc_online";
    case StrategyKind::lfl: return "lfl";
    case StrategyKind::lwf: return "lwf";
    case StrategyKind::iwd: return "iwd";
  }
  return "?";
}

StrategyKind parse_strategy_kind(std::string_view name) {
  for (auto k : {StrategyKind::finetune, StrategyKind::ewc_separate, StrategyKind::ewc_online, StrategyKind::lfl,
                 StrategyKind::lwf, StrategyKind::iwd})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown strategy " + std::string(name));
}

std::string_view to_string(Modifier m) {
  switch (m) {
    case Modifier::progressive_unfreeze: return "progressive_unfreeze";
    case Modifier::time_scaled_lambda: return "time_scaled_lambda";
    case Modifier::teacher_output_scaling: return "teacher_output_scaling";
  }
  return "?";
}

Modifier parse_modifier(std::string_view name) {
  for (auto m : {Modifier::progressive_unfreeze, Modifier::time_scaled_lambda, Modifier::teacher_output_scaling})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown modifier " + std::string(name));
}

double default_lambda(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::finetune: return 0.0;
    case StrategyKind::ewc_online: return 0.2;
    case StrategyKind::ewc_separate: return 0.3;
    case StrategyKind::lfl: return 0.4;
    case StrategyKind::lwf: return 0.4;
    case StrategyKind::iwd: return 0.2;
  }
  return 0.0;
}

StrategyConfig StrategyConfig::defaults(StrategyKind kind) {
  StrategyConfig c;
  c.kind = kind;
  c.lambda = default_lambda(kind);
  return c;
}

void StrategyConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive, got " + std::to_string(tau));
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1], got " + std::to_string(gamma));
  if (!(lambda_iwd >= 0.0) || !std::isfinite(lambda_iwd))
    throw ConfigError("lambda_iwd must be >= 0, got " + std::to_string(lambda_iwd));
  if (!(temperature_clamp.min > 0.0 && temperature_clamp.min <= temperature_clamp.max))
    throw ConfigError("temperature clamp must satisfy 0 < min <= max");
  if (fisher_max_samples == 0) throw ConfigError("fisher_max_samples must be at least 1");
}

bool StrategyConfig::needs_fisher() const {
  return kind == StrategyKind::ewc_separate || kind == StrategyKind::ewc_online || kind == StrategyKind::iwd ||
         has(Modifier::teacher_output_scaling);
}

Var total_loss(Var kpt_loss, Var reg_loss, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  return add(scale(kpt_loss, 1.0 - lambda), scale(reg_loss, lambda));
}

Var keypoint_loss(Var pred_logits, const Tensor& targets, const Tensor& mask) {
  Var logits = pred_logits;
  if (logits.value().rank() == 4) {
    const auto& s = logits.shape();
    logits = reshape(logits, Shape{s[0], s[1] * s[2] * s[3]});
  }
  if (logits.shape() != targets.shape())
    throw DimensionError("keypoint_loss: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
  Tape& tape = *logits.tape();
  return mse(sigmoid(logits), tape.constant(targets), &mask);
}

Var ewc_penalty(const std::map<std::string, Var>& current, const std::map<std::string, Tensor>& anchor,
                const FisherState& fisher) {
  if (current.empty()) throw RegistryError("ewc_penalty: no current parameters");
  Tape& tape = *current.begin()->second.tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  for (const auto& [name, f] : fisher.per_param) {
    auto cur = current.find(name);
    auto prev = anchor.find(name);
    if (cur == current.end() || prev == anchor.end())
      throw RegistryError("ewc_penalty: parameter " + name + " missing from " +
                          (cur == current.end() ? "current model" : "anchor"));
    const Tensor& a = prev->second;
    if (a.shape() != f.shape())
      throw RegistryError("ewc_penalty: importance and anchor shapes differ for " + name);
    Var theta = cur->second;
    if (theta.shape() != a.shape()) {
      const std::size_t rows = a.rank() == 1 ? 1 : a.dim(0);
      if (a.rank() != theta.value().rank() || a.rank() > 2 || (a.rank() == 2 && theta.shape()[0] != rows))
        throw RegistryError("ewc_penalty: cannot align " + name + " " + shape_str(theta.shape()) + " with anchor " +
                            shape_str(a.shape()));
      theta = leading_block(theta, rows, a.shape().back());
    }
    total = add(total, sum(mul_const(square(sub(theta, tape.constant(a))), f)));
  }
  return total;
}

Var ewc_penalty(const std::map<std::string, Var>& current, std::span<const EwcAnchor> anchors) {
  if (current.empty()) throw RegistryError("ewc_penalty: no current parameters");
  Tape& tape = *current.begin()->second.tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  for (const auto& anchor : anchors) total = add(total, ewc_penalty(current, anchor.params, anchor.fisher));
  return total;
}

Var lfl_penalty(Var features_cur, const Tensor& features_prev) {
  if (features_cur.shape() != features_prev.shape())
    throw DimensionError("lfl_penalty: features " + shape_str(features_cur.shape()) + " vs " +
                         shape_str(features_prev.shape()));
  Tape& tape = *features_cur.tape();
  return sum(square(sub(tape.constant(features_prev), features_cur)));
}

Var distill_rows(Var student_rows, const Tensor& teacher_rows, double tau) {
  Tape& tape = *student_rows.tape();
  Var p = softmax_temp(tape.constant(teacher_rows), tau);
  Var q = softmax_temp(student_rows, tau);
  return scale(kl_div(p, q), tau * tau);
}

namespace {

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> channels, std::size_t cells) {
  const std::size_t batch = x.dim(0), width = x.dim(1);
  Tensor out(Shape{batch * channels.size(), cells}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < channels.size(); ++k)
      std::copy_n(&x.values()[b * width + channels[k] * cells], cells,
                  &out.values()[(b * channels.size() + k) * cells]);
  return out;
}

Tensor flat_logits(const Tensor& t) {
  if (t.rank() == 2) return t;
  if (t.rank() == 4) return t.reshaped(Shape{t.dim(0), t.dim(1) * t.dim(2) * t.dim(3)});
  throw RankError("logits must be rank 2 or 4, got " + shape_str(t.shape()));
}

}  // namespace

Var lwf_penalty(Var logits_cur, const Tensor& logits_prev, std::span<const std::size_t> old_channels,
                std::size_t cells, double tau) {
  if (!(tau > 0.0)) throw TemperatureError("tau must be positive");
  if (cells == 0) throw DimensionError("lwf_penalty: zero cells per channel");
  const Tensor teacher = flat_logits(logits_prev);
  if (logits_cur.value().rank() != 2 || teacher.dim(0) != logits_cur.shape()[0])
    throw DimensionError("lwf_penalty: student " + shape_str(logits_cur.shape()) + " vs teacher " +
                         shape_str(teacher.shape()));
  if (teacher.dim(1) % cells != 0 || logits_cur.shape()[1] % cells != 0)
    throw DimensionError("lwf_penalty: logits width is not a multiple of the cell count");
  const std::size_t teacher_k = teacher.dim(1) / cells;
  if (old_channels.empty()) throw ChannelError("lwf_penalty: no old channels");
  for (auto c : old_channels)
    if (c >= teacher_k)
      throw ChannelError("lwf_penalty: channel " + std::to_string(c) + " is not known to the teacher (" +
                         std::to_string(teacher_k) + " channels)");
  Var student_rows = gather_channels(logits_cur, old_channels, cells);
  Tensor teacher_rows = gather_rows(teacher, old_channels, cells);
  const double n = static_cast<double>(teacher.dim(0) * old_channels.size());
  return scale(distill_rows(student_rows, teacher_rows, tau), 1.0 / n);
}

EffectiveSettings apply_modifiers(const StrategyConfig& config, int epoch, int total_epochs, const Model& model,
                                  const LayerTemperatures* importance) {
  if (total_epochs <= 0 || epoch < 0 || epoch >= total_epochs)
    throw IndexError("epoch " + std::to_string(epoch) + " outside 0.." + std::to_string(total_epochs - 1));
  EffectiveSettings s;
  s.lambda = config.lambda;
  if (config.has(Modifier::time_scaled_lambda))
    s.lambda = config.lambda * static_cast<double>(epoch + 1) / static_cast<double>(total_epochs);

  if (config.has(Modifier::progressive_unfreeze)) {
    for (const auto& [layer, start] : unfreeze_schedule(model, total_epochs))
      if (epoch >= start) s.trainable.insert(layer);
  } else {
    for (const auto& l : model.layers())
      if (l.has_params()) s.trainable.insert(l.spec.name);
  }

  if (config.has(Modifier::teacher_output_scaling) && importance) {
    for (const auto& [layer, f] : importance->normalized_importance)
      if (f > 0.0) s.teacher_scales[layer] = f;
  }
  return s;
}

Var regularization_loss(const StrategyConfig& config, const RegContext& ctx, const Model& model, Tape& tape,
                        const TapeTrace& student, const ForwardTrace& teacher) {
  const std::size_t cells = model.grid().cells();
  switch (config.kind) {
    case StrategyKind::finetune:
      return tape.constant(Tensor::scalar(0.0));
    case StrategyKind::ewc_separate:
    case StrategyKind::ewc_online:
      return ewc_penalty(student.params, ctx.ewc);
    case StrategyKind::lfl: {
      const auto& feat = model.feature_layer();
      return lfl_penalty(student.at(feat), teacher.at(feat));
    }
    case StrategyKind::lwf:
      return lwf_penalty(student.logits, teacher.at(model.output_layer()), ctx.old_channels, cells, config.tau);
    case StrategyKind::iwd: {
      Var lwf = lwf_penalty(student.logits, teacher.at(model.output_layer()), ctx.old_channels, cells, config.tau);
      IwdLayerSpec spec{ctx.old_channels, cells, config.iwd_head_domain};
      Var layered = iwd_penalty(student, teacher, model.output_layer(), ctx.temperatures, spec);
      return iwd_regularizer(lwf, layered, config.lambda_iwd);
    }
  }
  throw ConfigError("unhandled strategy");
}

}  // namespace posecl
