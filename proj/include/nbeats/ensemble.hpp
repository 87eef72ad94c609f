#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nbeats/metrics.hpp"
#include "nbeats/train.hpp"

namespace nbeats {

struct EnsembleSpec {
  std::vector<LossKind> losses{LossKind::Smape, LossKind::Mape, LossKind::Mase};
  std::vector<std::size_t> lookbacks{2, 3, 4, 5, 6, 7};
  std::size_t repeats = 1;
  ModelConfig base;
  TrainPlan plan;
};

struct MemberSpec {
  std::size_t index = 0;
  LossKind loss = LossKind::Smape;
  std::size_t lookback = 2;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  ModelConfig config;
  TrainPlan plan;
};

/// Stable hash of (base seed, loss, lookback, repeat).
std::uint64_t member_seed(std::uint64_t base_seed, LossKind loss, std::size_t lookback, std::size_t repeat);

/// Loss-major, then lookback, then repeat.
std::vector<MemberSpec> expand_spec(const EnsembleSpec& spec);

struct MemberResult {
  MemberSpec spec;
  bool ok = false;
  std::string error;
  ForecastMap forecasts;
  std::string weights;  // weight file name, when saved
};

struct MemberForecasts {
  std::vector<MemberResult> members;

  std::size_t survivors() const;
};

/// Called on the worker thread once a member finishes training, before its
/// forecasts are recorded.
using MemberHook = std::function<void(const MemberSpec&, const TrainResult&)>;

/// Trains every member independently and forecasts the test windows.
/// Results do not depend on worker_count. Throws unless at least half of the
/// members succeed.
MemberForecasts train_ensemble(const EnsembleSpec& spec, const SeriesSet& set, std::size_t worker_count,
                               const MemberHook& hook = {});

/// Pointwise median across members; an even count averages the central pair.
double median_of(std::vector<double> values);
ForecastMap aggregate_median(const std::vector<const ForecastMap*>& members);
ForecastMap aggregate_median(const MemberForecasts& members);

struct SweepRow {
  std::size_t size = 0;
  EvalReport report;
};

/// For each size, the median of the first `size` surviving members in
/// expand_spec order, scored against the view's targets.
std::vector<SweepRow> ensemble_size_sweep(const MemberForecasts& members, const std::vector<std::size_t>& sizes,
                                          const SplitView& view);

// Persistence: "series_id,f1..fH" per member plus manifest.csv.
void write_forecasts_csv(const ForecastMap& forecasts, const std::filesystem::path& path);
ForecastMap read_forecasts_csv(const std::filesystem::path& path);
std::string member_file_name(const MemberSpec& spec);
void write_member_forecasts(const MemberForecasts& members, const std::filesystem::path& dir);
MemberForecasts read_member_forecasts(const std::filesystem::path& dir);

}  // namespace nbeats
