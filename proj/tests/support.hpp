#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "posecl/autograd.hpp"
#include "posecl/model.hpp"
#include "posecl/random.hpp"
#include "posecl/runner.hpp"
#include "posecl/scenario.hpp"

namespace posecl::testing {

/// Builds a scalar loss from leaves recorded on `tape`, in the order given.
using LossFn = std::function<Var(Tape& tape, const std::vector<Var>& leaves)>;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Value of the loss with plain (non-differentiated) evaluation.
inline double eval_loss(const LossFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.constant(inputs[i]));
  return f(tape, leaves).value().item();
}

/// Relative error ||a - n|| / max(||a||, ||n||, floor) between the tape
/// gradient a and central differences n, over all inputs together.
inline double gradcheck(const LossFn& f, std::vector<Tensor> inputs, double eps = 1e-5, double floor = 1e-10) {
  Tape tape;
  std::vector<Var> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.parameter("x" + std::to_string(i), inputs[i]));
  const auto grads = tape.backward(f(tape, leaves));
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& g = grads.at("x" + std::to_string(i));
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double keep = inputs[i][k];
      inputs[i][k] = keep + eps;
      const double up = eval_loss(f, inputs);
      inputs[i][k] = keep - eps;
      const double down = eval_loss(f, inputs);
      inputs[i][k] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      diff += (g[k] - numeric) * (g[k] - numeric);
      na += g[k] * g[k];
      nn += numeric * numeric;
    }
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

/// Small MLP with the reference layer layout.
inline Model tiny_model(std::size_t input, std::vector<std::size_t> hidden, std::size_t keypoints, HeatmapGrid grid,
                        std::uint64_t seed) {
  const auto spec = reference_layers(input, hidden, keypoints, grid);
  return build_model(spec, keypoints, grid, seed);
}

/// Reference scenario cut down to run in a second or two.
inline ScenarioSpec quick_scenario(StrategyKind kind, std::uint64_t seed = 22, std::size_t n_train = 48,
                                   std::size_t n_val = 24, int epochs = 3) {
  ScenarioSpec s = ScenarioSpec::reference(kind, seed);
  for (auto& d : s.datasets) {
    d.n_train = n_train;
    d.n_val = n_val;
  }
  s.first_epochs = epochs;
  s.epochs = epochs;
  s.eval_every = 1;
  s.batch_size = 16;
  s.hidden = {16, 16};
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("posecl_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace posecl::testing
