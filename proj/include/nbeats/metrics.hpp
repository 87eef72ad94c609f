#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbeats/data.hpp"

namespace nbeats {

// Per-series metrics. Terms with a zero denominator contribute 0 and are
// counted in diag->zero_denominator.
double smape_metric(std::span<const double> forecast, std::span<const double> actual, Diagnostics* diag = nullptr);
/// M3 variant: denominator y + ŷ without absolute values.
double smape_m3_metric(std::span<const double> forecast, std::span<const double> actual,
                       Diagnostics* diag = nullptr);
double mape_metric(std::span<const double> forecast, std::span<const double> actual, Diagnostics* diag = nullptr);
/// Scale is the mean naive-m error over history followed by future. Empty
/// when that scale is zero or the series is no longer than m.
std::optional<double> mase_metric(std::span<const double> forecast, std::span<const double> future,
                                  std::span<const double> history, std::size_t m, Diagnostics* diag = nullptr);
/// Σ|Ŷ - Y| / Σ|Y| over every series and step.
double nd_metric(const std::vector<std::vector<double>>& forecast, const std::vector<std::vector<double>>& actual);

double owa(double smape, double mase, double naive2_smape, double naive2_mase);

// Baselines ------------------------------------------------------------------

/// Lag-k sample autocorrelation.
double autocorrelation(std::span<const double> x, std::size_t lag);
/// |r_m| > 1.645 sqrt((1 + 2 Σ_{k<m} r_k²) / N)
bool seasonality_test(std::span<const double> history, std::size_t m);
/// Multiplicative classical-decomposition indices, one per phase
/// (phase 0 = first history point), normalized to mean 1. Empty when the
/// centered moving average is not strictly positive.
std::vector<double> seasonal_indices(std::span<const double> history, std::size_t m);
Vector naive2_forecast(std::span<const double> history, std::size_t m, std::size_t horizon,
                       Diagnostics* diag = nullptr);
Vector snaive_forecast(std::span<const double> history, std::size_t m, std::size_t horizon);
Vector naive_forecast(std::span<const double> history, std::size_t horizon);

// Aggregation ----------------------------------------------------------------

/// Σ (N_s / N_tot) metric_s with N_s = horizon_s × count_s.
double aggregate_average(std::span<const double> subset_means, std::span<const std::size_t> subset_counts,
                         std::span<const std::size_t> subset_horizons);
std::vector<std::size_t> aggregate_weights(std::span<const std::size_t> subset_counts,
                                           std::span<const std::size_t> subset_horizons);

struct SeriesScore {
  std::string id;
  std::string frequency;
  double smape = 0.0;
  double smape_m3 = 0.0;
  double mape = 0.0;
  std::optional<double> mase;
};

struct MetricSummary {
  std::string name;  // frequency tag or "ALL"
  std::size_t count = 0;
  std::size_t horizon = 0;  // 0 for the aggregate row
  double smape = 0.0;
  double smape_m3 = 0.0;
  double mape = 0.0;
  double mase = 0.0;
  double naive2_smape = 0.0;
  double naive2_mase = 0.0;
  double owa = 0.0;
};

struct EvalReport {
  std::vector<SeriesScore> series;
  std::vector<MetricSummary> subsets;
  MetricSummary overall;
  Diagnostics diag;
};

struct Naive2Baseline {
  double smape = 0.0;
  double mase = 0.0;
};

using ForecastMap = std::map<std::string, std::vector<double>>;

/// Scores forecasts against each series' target window (test, or the
/// validation window when `view` is a validation split). Naïve2 baselines
/// come from `external` where given, otherwise they are computed.
EvalReport evaluate(const SplitView& view, const ForecastMap& forecasts,
                    const std::map<std::string, Naive2Baseline>& external = {});
EvalReport evaluate(const SeriesSet& set, const ForecastMap& forecasts,
                    const std::map<std::string, Naive2Baseline>& external = {});

/// CSV: "frequency,smape,mase" per line.
std::map<std::string, Naive2Baseline> read_naive2_csv(const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

/// Naïve2 forecasts of every member of a view (history = its visible range).
ForecastMap naive2_forecasts(const SplitView& view, Diagnostics* diag = nullptr);

}  // namespace nbeats
