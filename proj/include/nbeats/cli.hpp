#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nbeats/ensemble.hpp"

namespace nbeats {

enum class Preset { Generic, Interpretable };

std::string_view to_string(Preset preset);
Preset parse_preset(std::string_view text);

/// Flat "key = value" run description. Hyperparameter keys use the
/// conventional N-BEATS names (L_H, Iterations, S-width, ...).
struct RunConfig {
  std::string train;
  std::string test;
  std::string meta;
  /// Restricts the run to one frequency of the dataset; empty runs each.
  std::string frequency;

  Preset preset = Preset::Generic;
  Topology topology = Topology::Dress;

  double lh = 1.5;
  std::size_t iterations = 100;
  std::vector<LossKind> losses{LossKind::Smape, LossKind::Mape, LossKind::Mase};
  std::vector<std::size_t> lookbacks{2, 3, 4, 5, 6, 7};
  std::size_t batch = 1024;
  std::size_t repeats = 1;

  std::size_t s_width = 2048;
  std::size_t s_blocks = 3;
  std::size_t s_block_layers = 4;
  std::size_t t_width = 256;
  int t_degree = 2;
  std::size_t t_blocks = 3;
  std::size_t t_block_layers = 4;

  std::size_t width = 512;
  std::size_t blocks = 1;
  std::size_t block_layers = 4;
  std::size_t stacks = 30;

  /// Unset means the preset default: shared for interpretable, not for generic.
  std::optional<bool> sharing;

  bool validate = true;
  std::size_t patience = 5;
  std::size_t cadence = 0;
  std::uint64_t seed = 0;
  std::string out = "out";

  std::vector<std::size_t> ablate_stacks{1, 3, 9, 18, 30};
  std::vector<std::pair<std::size_t, std::size_t>> ablate_basis{{0, 2}, {2, 0}, {1, 1}, {3, 3}};
  std::vector<Topology> ablate_topology{all_topologies()};
  std::vector<std::size_t> ablate_ensemble_size{1, 6, 18};

  bool sharing_or_default() const { return sharing.value_or(preset == Preset::Interpretable); }
  /// Model for one horizon at the first lookback multiple.
  ModelConfig model_config(std::size_t horizon) const;
  TrainPlan train_plan() const;
  EnsembleSpec ensemble_spec(std::size_t horizon) const;
  /// Relative dataset paths are taken against `base`.
  void resolve_paths(const std::filesystem::path& base);

  bool operator==(const RunConfig&) const = default;
};

/// Throws std::invalid_argument listing every unknown key at once.
RunConfig parse_run_config(std::string_view text);
std::string serialize_run_config(const RunConfig& cfg);
/// Parses the file and resolves relative paths against its directory.
RunConfig load_run_config(const std::filesystem::path& path);

/// The dataset named by the config, optionally narrowed to cfg.frequency.
SeriesSet load_run_dataset(const RunConfig& cfg);

struct CommandOptions {
  std::filesystem::path config;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

/// Trains one ensemble per frequency. Writes under <out>/<frequency>/:
/// member weights (.nbw), training logs, member forecasts, manifest.csv and
/// forecast.csv (median); plus <out>/forecast.csv and <out>/run.cfg.
void cmd_train(const CommandOptions& opts, std::ostream& log);

enum class MetricName { Smape, SmapeM3, Mape, Mase, Owa, Nd };
MetricName parse_metric(std::string_view text);
std::string_view to_string(MetricName metric);

struct EvaluateOptions {
  CommandOptions common;
  /// Forecast CSVs, weight files, or cmd_train output directories. A
  /// built-in baseline name (naive, snaive, naive2) is also accepted.
  std::vector<std::string> sources;
  MetricName metric = MetricName::Smape;
  /// "internal" or a CSV of per-frequency Naïve2 sMAPE and MASE.
  std::string naive2 = "internal";
};

/// Writes <out>/report.csv and prints "name,value" per subset and overall for
/// the selected metric.
EvalReport cmd_evaluate(const EvaluateOptions& opts, std::ostream& out);

struct DecomposeOptions {
  CommandOptions common;
  std::vector<std::string> models;  // weight files or cmd_train output directories
  std::vector<std::string> series;
};

/// One CSV per series: t, ACTUAL, FORECAST, STACK1..STACKk, each divided by
/// the largest actual value of the test window. Several models are averaged.
void cmd_decompose(const DecomposeOptions& opts, std::ostream& log);

enum class AblationAxis { Stacks, Basis, Topology, EnsembleSize };
AblationAxis parse_axis(std::string_view text);
std::string_view to_string(AblationAxis axis);

struct AblateOptions {
  CommandOptions common;
  AblationAxis axis = AblationAxis::Stacks;
};

struct AblationRow {
  std::string setting;
  std::string frequency;
  MetricSummary summary;
};

/// Trains each setting on the train-minus-horizon range and scores it on the
/// held-out validation window. Writes <out>/ablation_<axis>.csv.
std::vector<AblationRow> cmd_ablate(const AblateOptions& opts, std::ostream& log);

/// Parses argv and dispatches; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace nbeats
