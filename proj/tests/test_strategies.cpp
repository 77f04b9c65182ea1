#include <doctest.h>

#include <cmath>

#include "posecl/errors.hpp"
#include "posecl/fisher.hpp"
#include "posecl/iwd.hpp"
#include "posecl/strategies.hpp"
#include "support.hpp"

using namespace posecl;
using namespace posecl::testing;

namespace {

std::map<std::string, Var> leaves(Tape& tape, const std::map<std::string, Tensor>& values) {
  std::map<std::string, Var> out;
  for (const auto& [n, v] : values) out.emplace(n, tape.parameter(n, v));
  return out;
}

double ewc_loop(const std::map<std::string, Tensor>& cur, const std::map<std::string, Tensor>& anchor,
                const std::map<std::string, Tensor>& fisher) {
  double s = 0.0;
  for (const auto& [n, f] : fisher)
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double d = cur.at(n)[k] - anchor.at(n)[k];
      s += f[k] * d * d;
    }
  return s;
}

FisherState random_fisher(Rng& rng, const Model& m) {
  FisherState f;
  for (const auto& [n, t] : m.parameter_values()) f.per_param[n] = random_tensor(rng, t.shape(), 0.01, 1.0);
  return fisher_per_layer(f, m);
}

}  // namespace

TEST_CASE("strategy names round-trip and defaults follow the reference settings") {
  for (auto k : {StrategyKind::finetune, StrategyKind::ewc_separate, StrategyKind::ewc_online, StrategyKind::lfl,
                 StrategyKind::lwf, StrategyKind::iwd})
    CHECK(parse_strategy_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_strategy_kind("sgd"), ConfigError);
  CHECK(default_lambda(StrategyKind::ewc_online) == 0.2);
  CHECK(default_lambda(StrategyKind::ewc_separate) == 0.3);
  CHECK(default_lambda(StrategyKind::lfl) == 0.4);
  CHECK(default_lambda(StrategyKind::lwf) == 0.4);
  const auto d = StrategyConfig::defaults(StrategyKind::lwf);
  CHECK(d.tau == 2.0);
  CHECK(d.gamma == 0.7);
}

TEST_CASE("strategy configs reject out-of-range values") {
  auto c = StrategyConfig::defaults(StrategyKind::iwd);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.temperature_clamp = {2.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("total loss mixes the terms by lambda") {
  Tape tape;
  Var a = tape.constant(Tensor::scalar(2.0));
  Var b = tape.constant(Tensor::scalar(10.0));
  CHECK(total_loss(a, b, 0.25).value().item() == 0.75 * 2.0 + 0.25 * 10.0);
  CHECK(total_loss(a, b, 0.0).value().item() == 2.0);
  CHECK_THROWS_AS(total_loss(a, b, -0.1), ConfigError);
}

TEST_CASE("ewc penalty matches a scalar loop and vanishes only at the anchor") {
  Rng rng(41);
  Model m = tiny_model(6, {4}, 2, HeatmapGrid{1, 2}, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto anchor = m.parameter_values();
    auto cur = anchor;
    for (auto& [n, t] : cur)
      for (auto& v : t.values()) v += rng.uniform(-0.5, 0.5);
    const FisherState f = random_fisher(rng, m);
    Tape tape;
    const double got = ewc_penalty(leaves(tape, cur), anchor, f).value().item();
    CHECK(std::abs(got - ewc_loop(cur, anchor, f.per_param)) <= 1e-12 * std::max(1.0, got));
    CHECK(got > 0.0);
    Tape t2;
    CHECK(ewc_penalty(leaves(t2, anchor), anchor, f).value().item() == 0.0);
  }
}

TEST_CASE("ewc penalty compares grown parameters on their leading block") {
  Model small = tiny_model(6, {4}, 2, HeatmapGrid{1, 2}, 5);
  Model big = expand_head(small, 3);
  Rng rng(1);
  const FisherState f = random_fisher(rng, small);
  Tape tape;
  CHECK(ewc_penalty(leaves(tape, big.parameter_values()), small.parameter_values(), f).value().item() == 0.0);
  auto missing = small.parameter_values();
  missing.erase("head.bias");
  Tape t2;
  CHECK_THROWS_AS(ewc_penalty(leaves(t2, big.parameter_values()), missing, f), RegistryError);
}

TEST_CASE("separate ewc with one anchor equals online ewc with gamma one") {
  Rng rng(43);
  Model m = tiny_model(6, {4}, 2, HeatmapGrid{1, 2}, 5);
  const auto anchor = m.parameter_values();
  auto cur = anchor;
  for (auto& [n, t] : cur)
    for (auto& v : t.values()) v += rng.uniform(-0.5, 0.5);
  const FisherState f = random_fisher(rng, m);
  FisherState zero = f;
  for (auto& [n, t] : zero.per_param) t = Tensor(t.shape(), 0.0);
  const FisherState online = ewc_online_update(zero, f, 1.0);
  const EwcAnchor sep[] = {{anchor, f}};
  const EwcAnchor onl[] = {{anchor, online}};
  Tape tape;
  auto vars = leaves(tape, cur);
  CHECK(ewc_penalty(vars, sep).value().item() == ewc_penalty(vars, onl).value().item());
}

TEST_CASE("online fisher update accumulates geometrically") {
  Rng rng(47);
  Model m = tiny_model(6, {4}, 2, HeatmapGrid{1, 2}, 5);
  const FisherState f1 = random_fisher(rng, m), f2 = random_fisher(rng, m), f3 = random_fisher(rng, m);
  const double g = 0.7;
  const FisherState acc = ewc_online_update(ewc_online_update(f1, f2, g), f3, g);
  for (const auto& [n, t] : acc.per_param)
    for (std::size_t k = 0; k < t.size(); ++k)
      CHECK(t[k] == g * (g * f1.per_param.at(n)[k] + f2.per_param.at(n)[k]) + f3.per_param.at(n)[k]);
  CHECK_THROWS_AS(ewc_online_update(f1, f2, 0.0), ConfigError);
}

TEST_CASE("lfl penalty is a squared feature distance with no head gradient") {
  Model m = tiny_model(6, {4, 3}, 2, HeatmapGrid{1, 2}, 5);
  Rng rng(53);
  Tensor x = random_tensor(rng, Shape{5, 6});
  const ForwardTrace teacher = forward(m, x);
  Model moved = m;
  for (auto& p : moved.parameters())
    for (auto& v : p.value->values()) v += rng.uniform(-0.3, 0.3);
  Tape tape;
  auto student = forward(moved, tape, x);
  Var pen = lfl_penalty(student.at("relu2"), teacher.at("relu2"));
  double loop = 0.0;
  const auto& a = student.at("relu2").value();
  const auto& b = teacher.at("relu2");
  for (std::size_t i = 0; i < a.size(); ++i) loop += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(pen.value().item() == doctest::Approx(loop).epsilon(1e-14));
  const auto g = tape.backward(pen);
  for (double v : g.at("head.weight").values()) CHECK(v == 0.0);
  for (double v : g.at("head.bias").values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(lfl_penalty(student.at("relu1"), teacher.at("relu2")), DimensionError);
}

TEST_CASE("lwf penalty matches the two-cell hand computation") {
  Tape tape;
  Var student = tape.constant(Tensor::matrix(1, 2, {0.0, 0.0}));
  const Tensor teacher = Tensor::matrix(1, 2, {std::log(3.0), 0.0});
  const std::size_t ch[] = {0};
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(std::abs(lwf_penalty(student, teacher, ch, 2, 1.0).value().item() - expected) <= 1e-12);
}

TEST_CASE("lwf penalty ignores new-channel logits") {
  Rng rng(59);
  const Tensor teacher = random_tensor(rng, Shape{3, 2 * 4});
  Tensor student = random_tensor(rng, Shape{3, 4 * 4});
  const std::size_t ch[] = {0, 1};
  Tape t1;
  const double base = lwf_penalty(t1.constant(student), teacher, ch, 4, 2.0).value().item();
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 8; k < 16; ++k) student[b * 16 + k] = rng.uniform(-50, 50);
  Tape t2;
  CHECK(lwf_penalty(t2.constant(student), teacher, ch, 4, 2.0).value().item() == base);
  const std::size_t unknown[] = {2};
  CHECK_THROWS_AS(lwf_penalty(t2.constant(student), teacher, unknown, 4, 2.0), ChannelError);
}

TEST_CASE("fisher per layer sums its parameters exactly") {
  Rng rng(61);
  Model m = tiny_model(6, {4, 3}, 2, HeatmapGrid{1, 2}, 5);
  const FisherState f = random_fisher(rng, m);
  CHECK(f.per_layer.at("relu1") == 0.0);
  for (const auto& l : m.layers()) {
    if (!l.has_params()) continue;
    double s = 0.0;
    for (double v : f.per_param.at(l.spec.name + ".bias").values()) s += v;
    double w = 0.0;
    for (double v : f.per_param.at(l.spec.name + ".weight").values()) w += v;
    CHECK(f.per_layer.at(l.spec.name) == 0.0 + s + w);
  }
}

TEST_CASE("fisher estimate does not depend on sample order") {
  Model m = tiny_model(4, {3}, 1, HeatmapGrid{1, 2}, 9);
  Rng rng(67);
  std::vector<Tensor> xs, ys;
  for (int i = 0; i < 6; ++i) {
    xs.push_back(random_tensor(rng, Shape{1, 4}));
    ys.push_back(random_tensor(rng, Shape{1, 2}, 0.0, 1.0));
  }
  auto make = [&](std::vector<std::size_t> order) {
    return fisher_per_param(
        m, order.size(),
        [&, order](const Model& model, Tape& tape, std::size_t i) {
          auto tr = forward(model, tape, xs[order[i]]);
          return sum(square(sub(sigmoid(tr.logits), tape.constant(ys[order[i]]))));
        },
        100);
  };
  const auto a = make({0, 1, 2, 3, 4, 5});
  const auto b = make({5, 3, 1, 0, 2, 4});
  for (const auto& [n, t] : a.per_param)
    for (std::size_t k = 0; k < t.size(); ++k)
      CHECK(std::abs(t[k] - b.per_param.at(n)[k]) <= 1e-15 * std::max(1.0, std::abs(t[k])));
  CHECK(a.sample_count == 6);
  CHECK_THROWS_AS(fisher_per_param(m, 0, nullptr, 4), DataError);
}

TEST_CASE("layer temperatures fall as importance rises and respect the clamp") {
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    FisherState f;
    for (int l = 0; l < 5; ++l) f.per_layer["l" + std::to_string(l)] = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0, 10);
    f.per_layer["l9"] = rng.uniform(0.1, 10);
    const auto t = layer_temperatures(f, 2.0);
    for (const auto& [a, fa] : f.per_layer)
      for (const auto& [b, fb] : f.per_layer) {
        if (fa > fb) CHECK(t.tau.at(a) <= t.tau.at(b));
      }
    for (const auto& [l, tau] : t.tau) {
      CHECK(tau >= 0.25);
      CHECK(tau <= 16.0);
    }
  }
  FisherState uniform;
  uniform.per_layer = {{"a", 3.0}, {"b", 3.0}, {"c", 0.0}};
  const auto t = layer_temperatures(uniform, 2.0);
  CHECK(t.tau.at("a") == 2.0);
  CHECK(t.tau.at("c") == 16.0);
  CHECK_THROWS_AS(layer_temperatures(uniform, 0.0), TemperatureError);
  CHECK_THROWS_AS(layer_temperatures(FisherState{}, 2.0), RegistryError);
  uniform.per_layer["d"] = -1.0;
  CHECK_THROWS_AS(layer_temperatures(uniform, 2.0), NumericError);
}

TEST_CASE("iwd on the logits layer alone reduces to lwf") {
  Rng rng(73);
  Model teacher_model = tiny_model(6, {4}, 2, HeatmapGrid{2, 2}, 3);
  Model student_model = expand_head(teacher_model, 3);
  for (auto& p : student_model.parameters())
    for (auto& v : p.value->values()) v += rng.uniform(-0.2, 0.2);
  Tensor x = random_tensor(rng, Shape{4, 6});
  const ForwardTrace teacher = forward(teacher_model, x);
  Tape tape;
  auto student = forward(student_model, tape, x);
  LayerTemperatures temps;
  temps.tau = {{"head", 2.0}};
  IwdLayerSpec spec{{0, 1}, 4, HeadSoftmaxDomain::per_channel};
  const double iwd = iwd_penalty(student, teacher, "head", temps, spec).value().item();
  const double lwf = lwf_penalty(student.logits, teacher.logits, spec.old_channels, 4, 2.0).value().item();
  CHECK(std::abs(iwd - lwf) <= 1e-10);
}

TEST_CASE("iwd regularizer with zero weight is the lwf term") {
  Tape tape;
  Var a = tape.constant(Tensor::scalar(1.25));
  Var b = tape.constant(Tensor::scalar(7.0));
  CHECK(iwd_regularizer(a, b, 0.0).value().item() == 1.25);
  CHECK(iwd_regularizer(a, b, 0.5).value().item() == 4.75);
  CHECK_THROWS_AS(iwd_regularizer(a, b, -1.0), ConfigError);
}

TEST_CASE("modifiers scale lambda, stage layers and expose teacher scales") {
  Model m = tiny_model(6, {4, 3}, 2, HeatmapGrid{1, 2}, 5);
  auto c = StrategyConfig::defaults(StrategyKind::lwf);
  c.modifiers = {Modifier::time_scaled_lambda, Modifier::progressive_unfreeze, Modifier::teacher_output_scaling};
  LayerTemperatures imp;
  imp.normalized_importance = {{"fc1", 0.5}, {"relu1", 0.0}, {"head", 1.5}};
  const auto first = apply_modifiers(c, 0, 10, m, &imp);
  CHECK(first.lambda == doctest::Approx(0.04));
  CHECK(first.trainable == std::set<std::string>{"head"});
  CHECK(first.teacher_scales == std::map<std::string, double>{{"fc1", 0.5}, {"head", 1.5}});
  const auto last = apply_modifiers(c, 9, 10, m, &imp);
  CHECK(last.lambda == doctest::Approx(0.4));
  CHECK(last.trainable.size() == 3);
  CHECK_THROWS_AS(apply_modifiers(c, 10, 10, m, &imp), IndexError);
  c.modifiers.clear();
  const auto plain = apply_modifiers(c, 0, 10, m, &imp);
  CHECK(plain.lambda == 0.4);
  CHECK(plain.teacher_scales.empty());
}
