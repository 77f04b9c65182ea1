#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "posecl/checkpoint.hpp"
#include "posecl/heatmap.hpp"
#include "posecl/optim.hpp"
#include "posecl/scenario.hpp"
#include "posecl/strategies.hpp"

namespace posecl {

struct ScenarioSpec {
  std::vector<SyntheticDatasetConfig> datasets;
  StrategyConfig strategy;
  int first_epochs = 60;
  int epochs = 30;
  std::size_t batch_size = 32;
  AdamWConfig optimizer;
  int eval_every = 10;  // epochs between history evaluations; the last epoch is always evaluated
  std::uint64_t seed = 22;
  std::vector<std::size_t> hidden{64, 64};
  HeatmapGrid grid{};
  double heatmap_sigma = 1.0;

  /// The three-dataset reference scenario with the given strategy.
  static ScenarioSpec reference(StrategyKind kind, std::uint64_t seed = 22);
  void validate() const;
  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

struct HistoryRow {
  int experience = 0;  // 1-based
  int epoch = 0;       // 1-based within the experience
  std::string dataset;
  std::string metric;
  double value = 0.0;
};

/// Lower-triangular score matrix: row i has one entry per dataset 0..i.
using ScoreMatrix = std::vector<std::vector<double>>;

struct ExperienceResult {
  std::vector<std::string> datasets;
  std::vector<std::string> metrics;        // primary metric of each dataset
  std::vector<std::size_t> keypoint_counts;  // cumulative head size after each experience
  ScoreMatrix primary;                     // each dataset in its own metric
  ScoreMatrix pck;
  ScoreMatrix ap;
  std::vector<HistoryRow> history;
  double average_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::vector<Checkpoint> checkpoints;     // model after each experience
};

/// Scores of one model on one dataset split in both metrics.
struct Scores {
  double pck = 0.0;
  double ap = 0.0;
};

Scores evaluate_both(const Model& model, const KeypointSchema& model_schema, std::span<const Scene> scenes,
                     const KeypointSchema& dataset_schema);

struct TrainOptions {
  int experience = 1;  // 1-based, used for shuffling seeds and diagnostics
  int epochs = 0;
  std::size_t batch_size = 32;
  AdamWConfig optimizer;
  std::uint64_t seed = 22;
  double heatmap_sigma = 1.0;
  /// Called after each epoch (0-based) to record evaluation rows.
  std::function<void(int epoch)> on_epoch;
};

/// Trains one experience in place. `ctx` must be present exactly for
/// experiences after the first. TrainingAbort on a non-finite loss.
void train_experience(Model& model, const ScenarioStep& step, const StrategyConfig& strategy, const RegContext* ctx,
                      const TrainOptions& options);

/// Trains every experience in order and evaluates each model on all datasets seen so far.
ExperienceResult run_scenario(const ScenarioSpec& spec, std::ostream* log = nullptr);

/// Mean of the final row of the primary matrix.
double average_accuracy(const ExperienceResult& result);

/// Score right after dataset j was trained minus the final score;
/// positive means forgetting. IndexError when j was never trained.
double forgetting(const ScoreMatrix& matrix, std::size_t dataset);
double forgetting(const ExperienceResult& result, std::size_t dataset);

/// CSV with header experience,epoch,dataset,metric,value: the per-epoch
/// history followed by the end-of-experience matrices (epoch "final").
void write_metrics_csv(const ExperienceResult& result, std::ostream& out);

/// Per-dataset primary-metric trajectory over experiences plus forgetting.
std::string forgetting_json(const ExperienceResult& result);

enum class GridParam { lambda, tau };
GridParam parse_grid_param(const std::string& name);
std::string to_string(GridParam p);

struct GridRow {
  double value = 0.0;
  double average_accuracy = 0.0;
  std::vector<double> finals;
};

struct GridResult {
  GridParam param = GridParam::lambda;
  std::vector<std::string> datasets;
  std::vector<GridRow> rows;
  std::size_t best = 0;  // index of the row with the highest average accuracy
};

GridResult grid_search(const ScenarioSpec& spec, GridParam param, const std::vector<double>& values,
                       std::ostream* log = nullptr);

struct SequenceRow {
  std::vector<std::string> order;
  double average_accuracy = 0.0;
  std::vector<double> finals;  // in training order
};

inline constexpr std::size_t kMaxSequenceDatasets = 4;

/// Runs every ordering of the datasets, ranked by average accuracy (best first).
std::vector<SequenceRow> run_sequences(const ScenarioSpec& spec, std::ostream* log = nullptr);

/// Formats a double so that it parses back to the same value.
std::string format_double(double v);
/// Quotes a CSV field.
std::string csv_quote(const std::string& s);

}  // namespace posecl
