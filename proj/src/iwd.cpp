#include "posecl/iwd.hpp"

#include <algorithm>
#include <cmath>

#include "posecl/errors.hpp"
#include "posecl/strategies.hpp"

namespace posecl {

LayerTemperatures layer_temperatures(const FisherState& fisher, double tau, TemperatureClamp clamp) {
  if (!(tau > 0.0)) throw TemperatureError("tau must be positive, got " + std::to_string(tau));
  if (!(clamp.min > 0.0 && clamp.min <= clamp.max)) throw TemperatureError("temperature clamp must satisfy 0 < min <= max");
  if (fisher.per_layer.empty()) throw RegistryError("layer_temperatures: no per-layer importances");

  LayerTemperatures out;
  out.base_tau = tau;
  double total = 0.0;
  std::size_t positive = 0;
  for (const auto& [layer, f] : fisher.per_layer) {
    if (!std::isfinite(f) || f < 0.0) throw NumericError("layer " + layer + " has invalid importance");
    out.raw_importance[layer] = f;
    if (f > 0.0) {
      total += f;
      ++positive;
    }
  }
  const double mean = positive ? total / static_cast<double>(positive) : 0.0;
  for (const auto& [layer, f] : fisher.per_layer) {
    const double fhat = f > 0.0 ? f / mean : 0.0;
    out.normalized_importance[layer] = fhat;
    out.tau[layer] = fhat > 0.0 ? std::clamp(tau / fhat, clamp.min, clamp.max) : clamp.max;
  }
  return out;
}

namespace {

Tensor old_rows(const Tensor& logits, std::span<const std::size_t> channels, std::size_t cells, bool flatten) {
  const Tensor x = logits.rank() == 4
                       ? logits.reshaped(Shape{logits.dim(0), logits.dim(1) * logits.dim(2) * logits.dim(3)})
                       : logits;
  const std::size_t batch = x.dim(0), width = x.dim(1);
  Tensor out(Shape{batch * channels.size(), cells}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < channels.size(); ++k) {
      if ((channels[k] + 1) * cells > width)
        throw ChannelError("channel " + std::to_string(channels[k]) + " is not known to the teacher");
      std::copy_n(&x.values()[b * width + channels[k] * cells], cells,
                  &out.values()[(b * channels.size() + k) * cells]);
    }
  if (flatten) return out.reshaped(Shape{batch, channels.size() * cells});
  return out;
}

}  // namespace

Var iwd_penalty(const TapeTrace& student, const ForwardTrace& teacher, const std::string& output_layer,
                const LayerTemperatures& temps, const IwdLayerSpec& spec) {
  if (temps.tau.empty()) throw RegistryError("iwd_penalty: no layer temperatures");
  Tape& tape = *student.logits.tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  std::size_t layers = 0;
  for (const auto& [name, tau_l] : temps.tau) {
    Var s = student.at(name);
    const Tensor& t = teacher.at(name);
    const std::size_t batch = s.shape()[0];
    Var term;
    if (name == output_layer) {
      if (spec.old_channels.empty() || spec.cells == 0) throw ChannelError("iwd_penalty: no old channels");
      const bool flat = spec.head_domain == HeadSoftmaxDomain::flatten;
      Tensor teacher_rows = old_rows(t, spec.old_channels, spec.cells, flat);
      Var student_rows = gather_channels(s, spec.old_channels, spec.cells);
      if (flat) student_rows = reshape(student_rows, Shape{batch, spec.old_channels.size() * spec.cells});
      term = scale(distill_rows(student_rows, teacher_rows, tau_l), 1.0 / static_cast<double>(teacher_rows.dim(0)));
    } else {
      if (s.shape() != t.shape())
        throw DimensionError("iwd_penalty: layer " + name + " student " + shape_str(s.shape()) + " vs teacher " +
                             shape_str(t.shape()));
      term = scale(distill_rows(s, t, tau_l), 1.0 / static_cast<double>(batch));
    }
    total = add(total, term);
    ++layers;
  }
  return scale(total, 1.0 / static_cast<double>(layers));
}

Var iwd_regularizer(Var lwf_term, Var iwd_term, double lambda_iwd) {
  if (!(lambda_iwd >= 0.0)) throw ConfigError("lambda_iwd must be >= 0");
  return add(lwf_term, scale(iwd_term, lambda_iwd));
}

}  // namespace posecl
