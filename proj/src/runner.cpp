#include "posecl/runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "posecl/errors.hpp"
#include "posecl/fisher.hpp"
#include "posecl/iwd.hpp"
#include "posecl/metrics.hpp"
#include "posecl/random.hpp"

namespace posecl {

ScenarioSpec ScenarioSpec::reference(StrategyKind kind, std::uint64_t seed) {
  ScenarioSpec s;
  s.datasets = reference_datasets(seed);
  s.strategy = StrategyConfig::defaults(kind);
  s.seed = seed;
  return s;
}

void ScenarioSpec::validate() const {
  if (datasets.empty()) throw ConfigError("scenario needs at least one dataset");
  for (const auto& d : datasets) d.validate();
  for (std::size_t i = 1; i < datasets.size(); ++i)
    if (!(datasets[i].image == datasets[0].image)) throw ConfigError("all datasets must share one image size");
  strategy.validate();
  if (first_epochs < 0 || epochs < 0) throw ConfigError("epoch counts must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (eval_every <= 0) throw ConfigError("eval_every must be positive");
  if (hidden.empty() || std::find(hidden.begin(), hidden.end(), 0u) != hidden.end())
    throw ConfigError("hidden widths must be positive");
  if (grid.cells() == 0) throw ConfigError("heatmap grid must be non-empty");
  if (!(heatmap_sigma > 0.0)) throw ConfigError("heatmap sigma must be positive");
  if (!(optimizer.lr > 0.0) || optimizer.weight_decay < 0.0) throw ConfigError("invalid optimizer settings");
}

Scores evaluate_both(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                     const KeypointSchema& dataset_schema) {
  const auto predictions = predict(model, model_schema, scenes, dataset_schema);
  return {pck_score(scenes, predictions, kDefaultPckAlpha), oks_ap_score(scenes, predictions, {})};
}

namespace {

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t width = x.dim(1);
  Tensor out(Shape{rows.size(), width}, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(&x.values()[rows[i] * width], width, &out.values()[i * width]);
  return out;
}

Batch encode_all(const std::vector<Scene>& scenes, const SchemaMapping& mapping, HeatmapGrid grid, double sigma) {
  std::vector<const Scene*> ptrs;
  ptrs.reserve(scenes.size());
  for (const auto& s : scenes) ptrs.push_back(&s);
  return make_batch(ptrs, mapping, grid, sigma);
}

void set_trainable(Model& model, const std::set<std::string>& trainable) {
  for (const auto& l : model.layers())
    if (l.has_params()) model.set_layer_trainable(l.spec.name, trainable.contains(l.spec.name));
}

}  // namespace

void train_experience(Model& model, const ScenarioStep& step, const StrategyConfig& strategy, const RegContext* ctx,
                      const TrainOptions& options) {
  if ((ctx != nullptr) != (options.experience > 1))
    throw ConfigError("a regularization context is required exactly for experiences after the first");
  if (options.epochs <= 0) return;
  if (step.mapping.target.size() != model.keypoint_count())
    throw SchemaError("model head has " + std::to_string(model.keypoint_count()) + " channels, experience needs " +
                      std::to_string(step.mapping.target.size()));
  const auto& train = step.dataset.train;
  if (train.empty()) throw DataError("experience " + std::to_string(options.experience) + " has no training data");

  const Batch all = encode_all(train, step.mapping, model.grid(), options.heatmap_sigma);
  std::vector<std::size_t> order(train.size());
  AdamWState state;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    EffectiveSettings settings;
    if (ctx) {
      settings = apply_modifiers(strategy, epoch, options.epochs, model, &ctx->temperatures);
    } else {
      settings.lambda = 0.0;
      for (const auto& l : model.layers())
        if (l.has_params()) settings.trainable.insert(l.spec.name);
    }
    set_trainable(model, settings.trainable);
    const auto* scales = settings.teacher_scales.empty() ? nullptr : &settings.teacher_scales;

    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(options.seed, static_cast<std::uint64_t>(options.experience), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const Tensor input = take_rows(all.input, rows);
      const Tensor targets = take_rows(all.targets, rows);
      const Tensor mask = take_rows(all.mask, rows);

      Tape tape;
      const TapeTrace student = forward(model, tape, input);
      Var kpt = keypoint_loss(student.logits, targets, mask);
      Var reg = tape.constant(Tensor::scalar(0.0));
      if (ctx) {
        const ForwardTrace teacher = forward(*ctx->teacher.model, input, true, scales);
        reg = regularization_loss(strategy, *ctx, model, tape, student, teacher);
      }
      Var loss = total_loss(kpt, reg, settings.lambda);
      const double value = loss.value().item();
      if (!std::isfinite(value))
        throw TrainingAbort("non-finite loss " + std::to_string(value) + " in experience " +
                                std::to_string(options.experience) + ", epoch " + std::to_string(epoch + 1) +
                                ", batch " + std::to_string(batch_index + 1),
                            options.experience, epoch + 1, batch_index + 1);
      const GradientMap grads = tape.backward(loss);
      auto params = model.parameters();
      try {
        adamw_step(params, grads, state, options.optimizer);
      } catch (const NumericError& e) {
        throw TrainingAbort(std::string(e.what()) + " in experience " + std::to_string(options.experience) +
                                ", epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(batch_index + 1),
                            options.experience, epoch + 1, batch_index + 1);
      }
    }
    if (options.on_epoch) options.on_epoch(epoch);
  }
  for (const auto& l : model.layers())
    if (l.has_params()) model.set_layer_trainable(l.spec.name, true);
}

ExperienceResult run_scenario(const ScenarioSpec& spec, std::ostream* log) {
  spec.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto steps = build_scenario(spec.datasets);
  const std::size_t pixels = spec.datasets.front().image.pixels();

  ExperienceResult result;
  for (const auto& s : steps) {
    result.datasets.push_back(s.dataset.config.name);
    result.metrics.push_back(s.dataset.config.metric);
  }

  const std::size_t k0 = steps.front().cumulative.size();
  Model model = build_model(reference_layers(pixels, spec.hidden, k0, spec.grid), k0, spec.grid,
                            Rng::mix(spec.seed, 0x6d6f64656cULL));

  std::vector<EwcAnchor> anchors;
  std::optional<FisherState> online;
  std::optional<FisherState> latest;  // Fisher of the previous model on its own data

  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& step = steps[i];
    const int experience = static_cast<int>(i) + 1;
    std::optional<RegContext> ctx;
    if (i > 0) {
      RegContext c;
      c.teacher = snapshot(model, experience - 1);
      c.old_channels.resize(model.keypoint_count());
      std::iota(c.old_channels.begin(), c.old_channels.end(), std::size_t{0});
      if (latest) {
        c.fisher = latest;
        c.temperatures = layer_temperatures(*latest, spec.strategy.tau, spec.strategy.temperature_clamp);
        if (spec.strategy.kind == StrategyKind::ewc_separate) {
          c.ewc = anchors;
        } else if (spec.strategy.kind == StrategyKind::ewc_online) {
          c.ewc = {EwcAnchor{model.parameter_values(), *online}};
        }
      }
      ctx = std::move(c);
      if (step.cumulative.size() > model.keypoint_count()) model = expand_head(model, step.cumulative.size());
    }
    if (log)
      *log << "experience " << experience << ": " << step.dataset.config.name << ", keypoints "
           << step.cumulative.size() << "\n";

    const int epochs = i == 0 ? spec.first_epochs : spec.epochs;
    auto record = [&](int epoch_label, bool final) {
      std::vector<double> primary, pck, ap;
      for (std::size_t j = 0; j <= i; ++j) {
        const auto& ds = steps[j].dataset;
        const Scores s = evaluate_both(model, step.cumulative, ds.val, ds.config.schema);
        result.history.push_back({experience, epoch_label, ds.config.name, "pck", s.pck});
        result.history.push_back({experience, epoch_label, ds.config.name, "ap", s.ap});
        pck.push_back(s.pck);
        ap.push_back(s.ap);
        primary.push_back(ds.config.metric == "pck" ? s.pck : s.ap);
      }
      if (final) {
        result.primary.push_back(std::move(primary));
        result.pck.push_back(std::move(pck));
        result.ap.push_back(std::move(ap));
      }
    };

    TrainOptions opts;
    opts.experience = experience;
    opts.epochs = epochs;
    opts.batch_size = spec.batch_size;
    opts.optimizer = spec.optimizer;
    opts.seed = spec.seed;
    opts.heatmap_sigma = spec.heatmap_sigma;
    opts.on_epoch = [&](int epoch) {
      if (epoch + 1 < epochs && (epoch + 1) % spec.eval_every == 0) record(epoch + 1, false);
    };
    train_experience(model, step, spec.strategy, ctx ? &*ctx : nullptr, opts);
    record(epochs, true);
    result.keypoint_counts.push_back(model.keypoint_count());

    Checkpoint ckpt{model, step.cumulative, experience, std::nullopt};
    if (i + 1 < steps.size() && spec.strategy.needs_fisher()) {
      FisherState fresh = fisher_per_layer(
          fisher_per_param(model, step.dataset.train, step.mapping, spec.heatmap_sigma,
                           spec.strategy.fisher_max_samples),
          model);
      if (spec.strategy.kind == StrategyKind::ewc_separate) anchors.push_back({model.parameter_values(), fresh});
      if (spec.strategy.kind == StrategyKind::ewc_online)
        online = online ? fisher_per_layer(ewc_online_update(*online, fresh, spec.strategy.gamma), model) : fresh;
      latest = fresh;
      ckpt.fisher = spec.strategy.kind == StrategyKind::ewc_online ? *online : fresh;
    }
    result.checkpoints.push_back(std::move(ckpt));
  }

  result.average_accuracy = average_accuracy(result);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

double average_accuracy(const ExperienceResult& result) {
  if (result.primary.empty() || result.primary.back().empty()) throw IndexError("scenario has no results");
  const auto& last = result.primary.back();
  return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

double forgetting(const ScoreMatrix& matrix, std::size_t dataset) {
  if (matrix.empty() || dataset >= matrix.size() || dataset >= matrix.back().size())
    throw IndexError("dataset " + std::to_string(dataset) + " was never trained");
  return matrix[dataset][dataset] - matrix.back()[dataset];
}

double forgetting(const ExperienceResult& result, std::size_t dataset) { return forgetting(result.primary, dataset); }

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_metrics_csv(const ExperienceResult& result, std::ostream& out) {
  out << "experience,epoch,dataset,metric,value\n";
  for (const auto& r : result.history)
    out << r.experience << ',' << r.epoch << ',' << csv_quote(r.dataset) << ',' << csv_quote(r.metric) << ','
        << format_double(r.value) << '\n';
}

std::string forgetting_json(const ExperienceResult& result) {
  nlohmann::ordered_json doc;
  doc["datasets"] = nlohmann::ordered_json::array();
  for (std::size_t j = 0; j < result.datasets.size(); ++j) {
    nlohmann::ordered_json d;
    d["name"] = result.datasets[j];
    d["metric"] = result.metrics[j];
    d["trained_at"] = j + 1;
    std::vector<double> series;
    for (std::size_t i = j; i < result.primary.size(); ++i) series.push_back(result.primary[i][j]);
    d["scores"] = series;
    d["forgetting"] = forgetting(result, j);
    doc["datasets"].push_back(d);
  }
  return doc.dump(2);
}

GridParam parse_grid_param(const std::string& name) {
  if (name == "lambda") return GridParam::lambda;
  if (name == "tau") return GridParam::tau;
  throw ConfigError("grid parameter must be lambda or tau, got " + name);
}

std::string to_string(GridParam p) { return p == GridParam::lambda ? "lambda" : "tau"; }

GridResult grid_search(const ScenarioSpec& spec, GridParam param, const std::vector<double>& values, std::ostream* log) {
  if (values.empty()) throw ConfigError("grid needs at least one value");
  GridResult out;
  out.param = param;
  for (double v : values) {
    ScenarioSpec s = spec;
    (param == GridParam::lambda ? s.strategy.lambda : s.strategy.tau) = v;
    if (log) *log << to_string(param) << " = " << format_double(v) << "\n";
    const auto r = run_scenario(s, log);
    if (out.datasets.empty()) out.datasets = r.datasets;
    out.rows.push_back({v, r.average_accuracy, r.primary.back()});
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i)
    if (out.rows[i].average_accuracy > out.rows[out.best].average_accuracy) out.best = i;
  return out;
}

std::vector<SequenceRow> run_sequences(const ScenarioSpec& spec, std::ostream* log) {
  if (spec.datasets.empty()) throw ConfigError("scenario needs at least one dataset");
  if (spec.datasets.size() > kMaxSequenceDatasets)
    throw ConfigError("refusing to enumerate orderings of " + std::to_string(spec.datasets.size()) +
                      " datasets (at most " + std::to_string(kMaxSequenceDatasets) + ")");
  std::vector<std::size_t> perm(spec.datasets.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<SequenceRow> rows;
  do {
    ScenarioSpec s = spec;
    s.datasets.clear();
    for (auto p : perm) s.datasets.push_back(spec.datasets[p]);
    const auto r = run_scenario(s, log);
    rows.push_back({r.datasets, r.average_accuracy, r.primary.back()});
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SequenceRow& a, const SequenceRow& b) { return a.average_accuracy > b.average_accuracy; });
  return rows;
}

}  // namespace posecl
