#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nbeats/data.hpp"
#include "nbeats/model.hpp"

namespace nbeats {

enum class LossKind { Smape, Mape, Mase };

std::string_view to_string(LossKind kind);
/// Case-insensitive "smape" / "mape" / "mase".
LossKind parse_loss(std::string_view text);

struct LossResult {
  double loss = 0.0;
  Vector grad;  // d loss / d forecast
};

/// sMAPE with the denominator |y| + |ŷ| held constant in the gradient.
LossResult smape_loss(std::span<const double> forecast, std::span<const double> target,
                      std::span<const double> mask);
/// MAPE; zero-valued targets are dropped from both sum and normalizer.
LossResult mape_loss(std::span<const double> forecast, std::span<const double> target,
                     std::span<const double> mask);
/// Masked mean absolute error scaled by the in-sample naive-m error of
/// `history`. Degenerate histories contribute zero.
LossResult mase_loss(std::span<const double> forecast, std::span<const double> target,
                     std::span<const double> mask, std::span<const double> history, std::size_t m,
                     Diagnostics* diag = nullptr);

struct TrainBatch {
  Matrix inputs;        // batch x backcast_len
  Matrix input_masks;
  Matrix targets;       // batch x H
  Matrix target_masks;
  std::vector<std::size_t> series_ids;  // index into the sampling source
  std::vector<std::size_t> periodicity;

  std::size_t size() const { return inputs.rows(); }
};

/// Mean of the per-sample losses; writes d loss / d forecast into grad.
double batch_loss(LossKind kind, const Matrix& forecast, const TrainBatch& batch, Matrix& grad,
                  Diagnostics* diag = nullptr);

struct TrainPlan {
  std::size_t iterations = 100;
  std::size_t batch_size = 1024;
  double lh = 1.5;
  LossKind loss = LossKind::Smape;
  std::size_t lookback_multiple = 2;
  std::size_t patience = 5;
  /// Batches between validation passes; 0 selects max(1, iterations / 20).
  std::size_t cadence = 0;
  std::uint64_t seed = 0;
  /// Early stopping on the last-horizon validation split; when false the
  /// full train range is sampled for exactly `iterations` batches.
  bool validate = true;

  std::size_t effective_cadence() const;
  /// ceil(L_H × H)
  std::size_t anchor_window(std::size_t horizon) const;
  void validate_plan() const;
};

/// Draws batch_size series with replacement and one anchor per draw from
/// the last anchor_window(H) points of its visible range. Positions outside
/// the series are zero and masked.
TrainBatch sample_batch(const SamplingSource& source, std::size_t horizon, const TrainPlan& plan, Rng& rng);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  ParamStore first_moment;
  ParamStore second_moment;

  AdamState() = default;
  explicit AdamState(const ModelConfig& cfg) : first_moment(cfg), second_moment(cfg) {}
};

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state);

struct TrainLogRow {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  double val_smape = std::numeric_limits<double>::quiet_NaN();
  bool best = false;
};

struct TrainResult {
  ParamStore params;
  std::vector<TrainLogRow> log;
  std::size_t iterations_run = 0;
  std::size_t best_iteration = 0;
  double best_val_smape = std::numeric_limits<double>::infinity();
  Diagnostics diag;
};

/// Lookback windows ending at each member's last visible point, zero-padded
/// on the left.
Matrix last_windows(const SamplingSource& source, std::size_t length);

/// Model forecasts for every member of a view, keyed by series id.
std::map<std::string, std::vector<double>> forecast_view(const SplitView& view, const Network& net,
                                                         const ParamStore& params);

/// Trains one model on a single-frequency set. Throws on a non-finite loss
/// naming the iteration.
TrainResult train_model(const SeriesSet& set, const ModelConfig& cfg, const TrainPlan& plan);

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

}  // namespace nbeats
