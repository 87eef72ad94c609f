#include "nbeats/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace nbeats {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(std::string(op) + ": forecast length " + std::to_string(a.size()) + ", actual length " +
                     std::to_string(b.size()));
  }
}

}  // namespace

double smape_metric(std::span<const double> forecast, std::span<const double> actual, Diagnostics* diag) {
  require_same_length(forecast, actual, "smape_metric");
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double denom = std::abs(actual[i]) + std::abs(forecast[i]);
    if (denom == 0.0) {
      if (diag) ++diag->zero_denominator;
      continue;
    }
    sum += std::abs(actual[i] - forecast[i]) / denom;
  }
  return 200.0 * sum / static_cast<double>(actual.size());
}

double smape_m3_metric(std::span<const double> forecast, std::span<const double> actual, Diagnostics* diag) {
  require_same_length(forecast, actual, "smape_m3_metric");
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double denom = actual[i] + forecast[i];
    if (denom == 0.0) {
      if (diag) ++diag->zero_denominator;
      continue;
    }
    sum += std::abs(actual[i] - forecast[i]) / denom;
  }
  return 200.0 * sum / static_cast<double>(actual.size());
}

double mape_metric(std::span<const double> forecast, std::span<const double> actual, Diagnostics* diag) {
  require_same_length(forecast, actual, "mape_metric");
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == 0.0) {
      if (diag) ++diag->zero_denominator;
      continue;
    }
    sum += std::abs(actual[i] - forecast[i]) / std::abs(actual[i]);
  }
  return 100.0 * sum / static_cast<double>(actual.size());
}

std::optional<double> mase_metric(std::span<const double> forecast, std::span<const double> future,
                                  std::span<const double> history, std::size_t m, Diagnostics* diag) {
  require_same_length(forecast, future, "mase_metric");
  if (m < 1) throw std::invalid_argument("mase_metric: periodicity must be >= 1");
  const std::size_t total = history.size() + future.size();
  if (total <= m) {
    if (diag) ++diag->undefined_mase;
    return std::nullopt;
  }
  auto at = [&](std::size_t j) { return j < history.size() ? history[j] : future[j - history.size()]; };
  double scale = 0.0;
  for (std::size_t j = m; j < total; ++j) scale += std::abs(at(j) - at(j - m));
  scale /= static_cast<double>(total - m);
  if (scale == 0.0) {
    if (diag) ++diag->undefined_mase;
    return std::nullopt;
  }
  double err = 0.0;
  for (std::size_t i = 0; i < future.size(); ++i) err += std::abs(future[i] - forecast[i]);
  err /= static_cast<double>(future.size());
  return err / scale;
}

double nd_metric(const std::vector<std::vector<double>>& forecast, const std::vector<std::vector<double>>& actual) {
  if (forecast.size() != actual.size()) throw ShapeError("nd_metric: series count mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < actual.size(); ++s) {
    if (forecast[s].size() != actual[s].size()) {
      throw ShapeError("nd_metric: length mismatch in series " + std::to_string(s));
    }
    for (std::size_t t = 0; t < actual[s].size(); ++t) {
      num += std::abs(forecast[s][t] - actual[s][t]);
      den += std::abs(actual[s][t]);
    }
  }
  if (den == 0.0) throw std::invalid_argument("nd_metric: sum of absolute actuals is zero");
  return num / den;
}

double owa(double smape, double mase, double naive2_smape, double naive2_mase) {
  if (naive2_smape == 0.0 || naive2_mase == 0.0) {
    throw std::invalid_argument("owa: Naive2 baseline mean is zero");
  }
  return 0.5 * (smape / naive2_smape + mase / naive2_mase);
}

// --- baselines ---------------------------------------------------------------

double autocorrelation(std::span<const double> x, std::size_t lag) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean;
    den += d * d;
    if (i >= lag) num += d * (x[i - lag] - mean);
  }
  return den == 0.0 ? 0.0 : num / den;
}

bool seasonality_test(std::span<const double> history, std::size_t m) {
  if (m <= 1 || history.size() <= m) return false;
  double sum_sq = 0.0;
  for (std::size_t k = 1; k < m; ++k) {
    const double r = autocorrelation(history, k);
    sum_sq += r * r;
  }
  const double limit = 1.645 * std::sqrt((1.0 + 2.0 * sum_sq) / static_cast<double>(history.size()));
  return std::abs(autocorrelation(history, m)) > limit;
}

std::vector<double> seasonal_indices(std::span<const double> history, std::size_t m) {
  const std::size_t n = history.size();
  if (m <= 1 || n < 2 * m) return {};
  // centered moving average; 2xm for even m
  const bool even = m % 2 == 0;
  const std::size_t half = m / 2;
  std::vector<double> ratio_sum(m, 0.0);
  std::vector<std::size_t> ratio_count(m, 0);
  for (std::size_t t = half; t + half < n; ++t) {
    double avg = 0.0;
    if (even) {
      avg += 0.5 * history[t - half] + 0.5 * history[t + half];
      for (std::size_t k = t - half + 1; k < t + half; ++k) avg += history[k];
    } else {
      for (std::size_t k = t - half; k <= t + half; ++k) avg += history[k];
    }
    avg /= static_cast<double>(m);
    if (!(avg > 0.0)) return {};
    ratio_sum[t % m] += history[t] / avg;
    ++ratio_count[t % m];
  }
  std::vector<double> idx(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (ratio_count[j] == 0) return {};
    idx[j] = ratio_sum[j] / static_cast<double>(ratio_count[j]);
  }
  const double mean = std::accumulate(idx.begin(), idx.end(), 0.0) / static_cast<double>(m);
  if (!(mean > 0.0)) return {};
  for (double& v : idx) v /= mean;
  if (std::any_of(idx.begin(), idx.end(), [](double v) { return !(v > 0.0); })) return {};
  return idx;
}

Vector naive_forecast(std::span<const double> history, std::size_t horizon) {
  if (history.empty()) throw std::invalid_argument("naive forecast: empty history");
  return Vector(horizon, history.back());
}

Vector naive2_forecast(std::span<const double> history, std::size_t m, std::size_t horizon, Diagnostics* diag) {
  if (history.empty()) throw std::invalid_argument("naive2_forecast: empty history");
  if (history.size() < std::max<std::size_t>(3 * m, 3)) {
    if (diag) ++diag->naive2_fallback;
    return naive_forecast(history, horizon);
  }
  if (m <= 1 || !seasonality_test(history, m)) return naive_forecast(history, horizon);
  const auto idx = seasonal_indices(history, m);
  if (idx.empty()) {
    if (diag) ++diag->naive2_fallback;
    return naive_forecast(history, horizon);
  }
  const std::size_t n = history.size();
  const double level = history[n - 1] / idx[(n - 1) % m];
  Vector out(horizon);
  for (std::size_t i = 0; i < horizon; ++i) out[i] = level * idx[(n + i) % m];
  return out;
}

Vector snaive_forecast(std::span<const double> history, std::size_t m, std::size_t horizon) {
  if (m < 1) throw std::invalid_argument("snaive_forecast: periodicity must be >= 1");
  if (history.size() < m) {
    throw std::invalid_argument("snaive_forecast: history length " + std::to_string(history.size()) +
                                " shorter than periodicity " + std::to_string(m));
  }
  const std::size_t n = history.size();
  Vector out(horizon);
  for (std::size_t i = 1; i <= horizon; ++i) {
    const std::size_t back = m * ((i + m - 1) / m);  // m * ceil(i/m)
    out[i - 1] = history[n - 1 + i - back];
  }
  return out;
}

// --- aggregation -------------------------------------------------------------

std::vector<std::size_t> aggregate_weights(std::span<const std::size_t> subset_counts,
                                           std::span<const std::size_t> subset_horizons) {
  if (subset_counts.size() != subset_horizons.size()) {
    throw std::invalid_argument("aggregate_weights: list lengths differ");
  }
  std::vector<std::size_t> w(subset_counts.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = subset_counts[i] * subset_horizons[i];
  return w;
}

double aggregate_average(std::span<const double> subset_means, std::span<const std::size_t> subset_counts,
                         std::span<const std::size_t> subset_horizons) {
  if (subset_means.size() != subset_counts.size()) {
    throw std::invalid_argument("aggregate_average: list lengths differ");
  }
  const auto w = aggregate_weights(subset_counts, subset_horizons);
  const double total = static_cast<double>(std::accumulate(w.begin(), w.end(), std::size_t{0}));
  if (total == 0.0) throw std::invalid_argument("aggregate_average: zero total weight");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += static_cast<double>(w[i]) / total * subset_means[i];
  return acc;
}

// --- reports -----------------------------------------------------------------

ForecastMap naive2_forecasts(const SplitView& view, Diagnostics* diag) {
  ForecastMap out;
  const auto& set = view.set();
  for (std::size_t i = 0; i < view.series_count(); ++i) {
    const auto& s = set.series[view.series_index(i)];
    const auto f = naive2_forecast(view.visible(i), set.periodicity_of(s), set.horizon_of(s), diag);
    out[s.id] = f.values();
  }
  return out;
}

namespace {

/// NaN instead of an error when a baseline mean is zero.
double safe_owa(const MetricSummary& m) {
  if (m.naive2_smape == 0.0 || m.naive2_mase == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return owa(m.smape, m.mase, m.naive2_smape, m.naive2_mase);
}

struct SubsetAccumulator {
  std::size_t count = 0;
  std::size_t mase_count = 0;
  double smape = 0.0, smape_m3 = 0.0, mape = 0.0, mase = 0.0;
};

std::vector<SeriesScore> score_all(const SplitView& view, const ForecastMap& forecasts, Diagnostics& diag) {
  const auto& set = view.set();
  std::vector<std::string> missing;
  std::vector<SeriesScore> scores;
  for (std::size_t i = 0; i < view.series_count(); ++i) {
    const auto& s = set.series[view.series_index(i)];
    auto it = forecasts.find(s.id);
    if (it == forecasts.end()) {
      missing.push_back(s.id);
      continue;
    }
    const auto target = view.target(i);
    if (it->second.size() != target.size()) {
      throw std::invalid_argument("forecast for '" + s.id + "' has length " + std::to_string(it->second.size()) +
                                  ", expected " + std::to_string(target.size()));
    }
    SeriesScore sc;
    sc.id = s.id;
    sc.frequency = s.frequency;
    sc.smape = smape_metric(it->second, target, &diag);
    sc.smape_m3 = smape_m3_metric(it->second, target, &diag);
    sc.mape = mape_metric(it->second, target, &diag);
    sc.mase = mase_metric(it->second, target, view.visible(i), set.periodicity_of(s), &diag);
    scores.push_back(std::move(sc));
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t k = 0; k < missing.size() && k < 20; ++k) list += (k ? "," : "") + missing[k];
    if (missing.size() > 20) list += ",...";
    throw std::invalid_argument("forecasts missing for " + std::to_string(missing.size()) + " series: " + list);
  }
  return scores;
}

std::map<std::string, SubsetAccumulator> accumulate(const std::vector<SeriesScore>& scores) {
  std::map<std::string, SubsetAccumulator> acc;
  for (const auto& sc : scores) {
    auto& a = acc[sc.frequency];
    ++a.count;
    a.smape += sc.smape;
    a.smape_m3 += sc.smape_m3;
    a.mape += sc.mape;
    if (sc.mase) {
      a.mase += *sc.mase;
      ++a.mase_count;
    }
  }
  return acc;
}

}  // namespace

EvalReport evaluate(const SplitView& view, const ForecastMap& forecasts,
                    const std::map<std::string, Naive2Baseline>& external) {
  EvalReport report;
  report.series = score_all(view, forecasts, report.diag);
  const auto acc = accumulate(report.series);

  std::map<std::string, SubsetAccumulator> naive_acc;
  bool need_internal = false;
  for (const auto& [tag, a] : acc) need_internal |= !external.contains(tag);
  if (need_internal) {
    Diagnostics scratch;
    const auto naive = naive2_forecasts(view, &report.diag);
    naive_acc = accumulate(score_all(view, naive, scratch));
  }

  std::vector<double> sm, sm3, mp, ms, nsm, nms;
  std::vector<std::size_t> counts, horizons;
  for (const auto& tag : view.set().present_frequencies()) {
    auto it = acc.find(tag);
    if (it == acc.end()) continue;
    const auto& a = it->second;
    MetricSummary row;
    row.name = tag;
    row.count = a.count;
    row.horizon = view.set().frequency(tag).horizon;
    row.smape = a.smape / static_cast<double>(a.count);
    row.smape_m3 = a.smape_m3 / static_cast<double>(a.count);
    row.mape = a.mape / static_cast<double>(a.count);
    row.mase = a.mase_count ? a.mase / static_cast<double>(a.mase_count) : 0.0;
    if (auto ext = external.find(tag); ext != external.end()) {
      row.naive2_smape = ext->second.smape;
      row.naive2_mase = ext->second.mase;
    } else {
      const auto& n = naive_acc.at(tag);
      row.naive2_smape = n.smape / static_cast<double>(n.count);
      row.naive2_mase = n.mase_count ? n.mase / static_cast<double>(n.mase_count) : 0.0;
    }
    row.owa = safe_owa(row);
    report.subsets.push_back(row);
    sm.push_back(row.smape);
    sm3.push_back(row.smape_m3);
    mp.push_back(row.mape);
    ms.push_back(row.mase);
    nsm.push_back(row.naive2_smape);
    nms.push_back(row.naive2_mase);
    counts.push_back(row.count);
    horizons.push_back(row.horizon);
  }
  auto& all = report.overall;
  all.name = "ALL";
  all.count = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (!report.subsets.empty()) {
    all.smape = aggregate_average(sm, counts, horizons);
    all.smape_m3 = aggregate_average(sm3, counts, horizons);
    all.mape = aggregate_average(mp, counts, horizons);
    all.mase = aggregate_average(ms, counts, horizons);
    all.naive2_smape = aggregate_average(nsm, counts, horizons);
    all.naive2_mase = aggregate_average(nms, counts, horizons);
    all.owa = safe_owa(all);
  }
  return report;
}

EvalReport evaluate(const SeriesSet& set, const ForecastMap& forecasts,
                    const std::map<std::string, Naive2Baseline>& external) {
  return evaluate(SplitView(set, SplitMode::Full), forecasts, external);
}

std::map<std::string, Naive2Baseline> read_naive2_csv(const std::filesystem::path& path) {
  std::map<std::string, Naive2Baseline> out;
  bool header = false;
  {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string first;
    std::getline(in, first);
    header = first.starts_with("frequency");
  }
  for (const auto& row : read_series_csv(path, header)) {
    if (row.values.size() != 2) {
      throw std::runtime_error(path.string() + ":" + std::to_string(row.line) + ": expected frequency,smape,mase");
    }
    out[row.id] = {row.values[0], row.values[1]};
  }
  return out;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "series_id,smape,mape,mase\n";
  for (const auto& s : report.series) {
    out << s.id << ',' << format_double(s.smape) << ',' << format_double(s.mape) << ','
        << (s.mase ? format_double(*s.mase) : std::string("NA")) << '\n';
  }
  out << "level,name,count,smape,smape_m3,mape,mase,naive2_smape,naive2_mase,owa\n";
  auto row = [&](const char* level, const MetricSummary& m) {
    out << level << ',' << m.name << ',' << m.count << ',' << format_double(m.smape) << ','
        << format_double(m.smape_m3) << ',' << format_double(m.mape) << ',' << format_double(m.mase) << ','
        << format_double(m.naive2_smape) << ',' << format_double(m.naive2_mase) << ',' << format_double(m.owa)
        << '\n';
  };
  for (const auto& s : report.subsets) row("subset", s);
  row("overall", report.overall);
}

}  // namespace nbeats
