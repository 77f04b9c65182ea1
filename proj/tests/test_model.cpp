#include <doctest.h>

#include <numeric>
#include <set>

#include "posecl/checkpoint.hpp"
#include "posecl/errors.hpp"
#include "posecl/model.hpp"
#include "posecl/optim.hpp"
#include "support.hpp"

using namespace posecl;
using namespace posecl::testing;

TEST_CASE("reference layout chains dense and activation layers") {
  const std::size_t hidden[] = {64, 64};
  const auto spec = reference_layers(64, hidden, 17, HeatmapGrid{});
  REQUIRE(spec.size() == 5);
  CHECK(spec[0].name == "fc1");
  CHECK(spec[1].kind == LayerKind::activation);
  CHECK(spec[4].name == "head");
  CHECK(spec[4].group == LayerGroup::head);
  CHECK(spec[4].out_dim == 17 * 64);
}

TEST_CASE("initialization is seeded, He-uniform with zero biases") {
  Model a = tiny_model(16, {8}, 3, HeatmapGrid{2, 2}, 7);
  Model b = tiny_model(16, {8}, 3, HeatmapGrid{2, 2}, 7);
  Model c = tiny_model(16, {8}, 3, HeatmapGrid{2, 2}, 8);
  CHECK(a.parameter_values() == b.parameter_values());
  CHECK(a.parameter_values() != c.parameter_values());
  const double bound = std::sqrt(6.0 / 16.0);
  for (double w : a.layer("fc1").weight.values()) CHECK(std::abs(w) <= bound);
  for (double v : a.layer("fc1").bias.values()) CHECK(v == 0.0);
}

TEST_CASE("parameters partition exactly into layers") {
  Model m = tiny_model(16, {8, 6}, 3, HeatmapGrid{2, 2}, 1);
  std::size_t by_layer = 0;
  std::set<std::string> seen;
  for (const auto& l : m.layers()) {
    if (!l.has_params()) continue;
    by_layer += l.weight.size() + l.bias.size();
  }
  for (const auto& [name, t] : m.parameter_values()) {
    CHECK(seen.insert(name).second);
    CHECK(m.layer(m.layer_of(name)).has_params());
  }
  CHECK(by_layer == m.parameter_count());
  CHECK_THROWS_AS(m.layer_of("relu1.weight"), RegistryError);
  CHECK_THROWS_AS(m.layer("nope"), LookupError);
  CHECK(m.feature_layer() == "relu2");
}

TEST_CASE("model construction rejects broken layouts") {
  std::vector<LayerSpec> spec = {{"fc1", LayerKind::dense, 4, 3, LayerGroup::backbone},
                                 {"head", LayerKind::dense, 5, 8, LayerGroup::head}};
  CHECK_THROWS_AS(build_model(spec, 2, HeatmapGrid{2, 2}, 1), SpecError);
  spec[1].in_dim = 3;
  CHECK_NOTHROW(build_model(spec, 2, HeatmapGrid{2, 2}, 1));
  CHECK_THROWS_AS(build_model(spec, 3, HeatmapGrid{2, 2}, 1), SpecError);
}

TEST_CASE("tape forward and value forward agree") {
  Model m = tiny_model(9, {5, 4}, 2, HeatmapGrid{3, 3}, 3);
  Rng rng(1);
  Tensor x = random_tensor(rng, Shape{4, 9});
  Tape tape;
  auto traced = forward(m, tape, x);
  auto plain = forward(m, x);
  CHECK(traced.logits.value().data() == plain.logits.data());
  CHECK(plain.logits.shape() == Shape{4, 2, 3, 3});
  CHECK(traced.params.size() == 6);
  Tape frozen_tape;
  auto frozen = forward(m, frozen_tape, x, {.frozen = true});
  CHECK(frozen.params.empty());
  CHECK_THROWS_AS(forward(m, random_tensor(rng, Shape{4, 8})), DimensionError);
}

TEST_CASE("head expansion keeps old channels bit-exact and zeroes new ones") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Model m = tiny_model(16, {8, 8}, 3, HeatmapGrid{2, 2}, 100 + trial);
    Model g = expand_head(m, 5);
    Tensor x = random_tensor(rng, Shape{6, 16});
    const Tensor before = forward(m, x, false).logits;
    const Tensor after = forward(g, x, false).logits;
    for (std::size_t b = 0; b < 6; ++b) {
      for (std::size_t k = 0; k < 12; ++k) CHECK(after[b * 20 + k] == before[b * 12 + k]);
      for (std::size_t k = 12; k < 20; ++k) CHECK(after[b * 20 + k] == 0.0);
    }
  }
  Model m = tiny_model(16, {8}, 3, HeatmapGrid{2, 2}, 1);
  CHECK_THROWS_AS(expand_head(m, 3), ExpansionError);
}

TEST_CASE("snapshots are isolated from the live model") {
  Model m = tiny_model(4, {3}, 1, HeatmapGrid{1, 2}, 2);
  Snapshot s = snapshot(m, 1);
  const auto frozen = s.model->parameter_values();
  for (auto& p : m.parameters())
    for (auto& v : p.value->values()) v += 1.0;
  CHECK(s.model->parameter_values() == frozen);
}

TEST_CASE("layer scales multiply the named layer output") {
  Model m = tiny_model(4, {3}, 1, HeatmapGrid{1, 2}, 2);
  Rng rng(2);
  Tensor x = random_tensor(rng, Shape{2, 4});
  const std::map<std::string, double> scales = {{"head", 2.0}};
  const Tensor base = forward(m, x, false).logits;
  const Tensor scaled = forward(m, x, false, &scales).logits;
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i] == 2.0 * base[i]);
}

TEST_CASE("progressive unfreeze opens layers from output to input") {
  Model m = tiny_model(4, {3, 3}, 1, HeatmapGrid{1, 2}, 2);
  const auto sched = unfreeze_schedule(m, 30);
  REQUIRE(sched.size() == 3);
  CHECK(sched[0] == std::make_pair(std::string("head"), 0));
  CHECK(sched[1] == std::make_pair(std::string("fc2"), 10));
  CHECK(sched[2] == std::make_pair(std::string("fc1"), 20));
}

TEST_CASE("adamw first step moves each weight by about lr against its gradient") {
  Tensor w = Tensor::vector({1.0, -2.0, 0.5});
  std::vector<ParamRef> params = {{"w", "l", &w, true}};
  GradientMap g = {{"w", Tensor::vector({0.3, -4.0, 0.0})}};
  AdamWState state;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  adamw_step(params, g, state, cfg);
  CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(w[2] == 0.5);
}

TEST_CASE("adamw decays weights decoupled from the gradient") {
  Tensor w = Tensor::vector({2.0});
  std::vector<ParamRef> params = {{"w", "l", &w, true}};
  GradientMap g = {{"w", Tensor::vector({0.0})}};
  AdamWState state;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  adamw_step(params, g, state, cfg);
  CHECK(w[0] == doctest::Approx(2.0 * (1.0 - 0.05)));
}

TEST_CASE("adamw leaves frozen parameters and rejects non-finite gradients") {
  Tensor w = Tensor::vector({1.0});
  Tensor v = Tensor::vector({1.0});
  std::vector<ParamRef> params = {{"w", "a", &w, false}, {"v", "b", &v, true}};
  AdamWState state;
  adamw_step(params, {{"w", Tensor::vector({1.0})}, {"v", Tensor::vector({1.0})}}, state, {});
  CHECK(w[0] == 1.0);
  CHECK(v[0] != 1.0);
  const double keep = v[0];
  CHECK_THROWS_AS(adamw_step(params, {{"w", Tensor::vector({1.0})}, {"v", Tensor::vector({NAN})}}, state, {}),
                  NumericError);
  CHECK(v[0] == keep);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
  Model m = expand_head(tiny_model(16, {8}, 2, HeatmapGrid{2, 2}, 3), 3);
  FisherState f;
  for (const auto& [n, t] : m.parameter_values()) f.per_param[n] = Tensor(t.shape(), 0.25);
  f.per_layer["fc1"] = 1.5;
  f.sample_count = 4;
  Checkpoint ck{m, KeypointSchema("s", {"a", "b", "c"}), 2, f};
  const std::string bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.experience == 2);
  CHECK(back.schema == ck.schema);
  CHECK(back.model.parameter_values() == m.parameter_values());
  CHECK(back.model.keypoint_count() == 3);
  REQUIRE(back.fisher.has_value());
  CHECK(back.fisher->per_param == f.per_param);
  CHECK(back.fisher->per_layer == f.per_layer);
  CHECK(encode_checkpoint(back) == bytes);

  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}
