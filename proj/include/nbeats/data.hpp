#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbeats/ndcore.hpp"

namespace nbeats {

/// Non-fatal conditions that are skipped and counted rather than thrown.
struct Diagnostics {
  std::size_t short_validation = 0;  // series too short for a validation window
  std::size_t short_history = 0;     // MASE loss history shorter than m + 1
  std::size_t naive2_fallback = 0;   // Naïve2 history too short for seasonal adjustment
  std::size_t zero_denominator = 0;  // metric terms dropped for a zero denominator
  std::size_t undefined_mase = 0;    // series whose MASE scale is zero

  void merge(const Diagnostics& other);
};

struct FrequencyInfo {
  std::string tag;
  std::size_t horizon = 1;
  std::size_t periodicity = 1;
  /// Series whose id starts with this prefix belong to the frequency.
  std::string id_prefix;

  bool operator==(const FrequencyInfo&) const = default;
};

struct Series {
  std::string id;
  std::string frequency;
  std::vector<double> train;
  std::vector<double> test;

  bool operator==(const Series&) const = default;
};

class SeriesSet {
 public:
  std::vector<FrequencyInfo> frequencies;
  std::vector<Series> series;

  const FrequencyInfo& frequency(const std::string& tag) const;
  const FrequencyInfo& frequency_of(const Series& s) const { return frequency(s.frequency); }
  std::size_t horizon_of(const Series& s) const { return frequency(s.frequency).horizon; }
  std::size_t periodicity_of(const Series& s) const { return frequency(s.frequency).periodicity; }
  std::optional<std::size_t> find(const std::string& id) const;
  /// Series of one frequency, in original order.
  SeriesSet subset(const std::string& tag) const;
  /// Frequencies that have at least one series, in metadata order.
  std::vector<std::string> present_frequencies() const;
  std::size_t size() const { return series.size(); }
};

// --- files -------------------------------------------------------------------

struct CsvRow {
  std::size_t line = 0;  // 1-based
  std::string id;
  std::vector<double> values;
};

/// "id,v1,v2,..." rows; blank trailing cells ignored; quoted ids accepted.
/// When skip_header is set the first row is ignored.
std::vector<CsvRow> read_series_csv(const std::filesystem::path& path, bool skip_header = false);
void write_series_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                      const std::vector<std::vector<double>>& rows);
/// Shortest round-trip text for a double.
std::string format_double(double v);

/// Lines of "frequency,horizon,periodicity[,id_prefix]". Lines starting with
/// '#' and a header line beginning with "frequency" are ignored.
std::vector<FrequencyInfo> read_meta(const std::filesystem::path& path);
void write_meta(const std::filesystem::path& path, const std::vector<FrequencyInfo>& meta);
/// Competition defaults: Yearly/6/1, Quarterly/8/4, Monthly/18/12, Other/8/1
/// (M3) and the M4 Weekly/13/1, Daily/14/1, Hourly/48/24.
std::vector<FrequencyInfo> m3_meta();
std::vector<FrequencyInfo> m4_meta();
std::vector<FrequencyInfo> tourism_meta();

/// Canonical loader. With a single frequency in meta every series belongs
/// to it; otherwise the longest matching id prefix decides.
SeriesSet load_dataset(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                       const std::filesystem::path& meta);
SeriesSet load_dataset(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                       const std::vector<FrequencyInfo>& meta, bool skip_header = false);
void save_dataset(const SeriesSet& set, const std::filesystem::path& train_csv,
                  const std::filesystem::path& test_csv, const std::filesystem::path& meta);

/// M4 distribution: header row "V1,V2,...", quoted ids.
SeriesSet load_m4(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                  const std::vector<FrequencyInfo>& meta);
/// CSV export of one M3C.xls sheet (Series, N, NF, ..., then values). The
/// last NF values of each row are the test window.
SeriesSet load_m3_sheet(const std::filesystem::path& csv, const FrequencyInfo& frequency);
/// Tourism column layout: row 1 ids, row 2 lengths, row 3 start, then values.
SeriesSet load_tourism(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                       const FrequencyInfo& frequency);

// --- splits ------------------------------------------------------------------

/// Read-only window onto the values a sampler may see.
class SamplingSource {
 public:
  virtual ~SamplingSource() = default;
  virtual std::size_t series_count() const = 0;
  virtual std::size_t length(std::size_t i) const = 0;
  virtual double value(std::size_t i, std::size_t t) const = 0;
  virtual std::size_t periodicity(std::size_t i) const = 0;
};

enum class SplitMode {
  Validation,  // visible = train minus the last horizon
  Full,        // visible = full train; targets are the test windows
};

class SplitView : public SamplingSource {
 public:
  SplitView(const SeriesSet& set, SplitMode mode, Diagnostics* diag = nullptr);

  SplitMode mode() const { return mode_; }
  const SeriesSet& set() const { return *set_; }
  /// Index into set().series of the i-th member of the view.
  std::size_t series_index(std::size_t i) const { return members_.at(i); }

  std::size_t series_count() const override { return members_.size(); }
  std::size_t length(std::size_t i) const override;
  double value(std::size_t i, std::size_t t) const override;
  std::size_t periodicity(std::size_t i) const override;

  std::span<const double> visible(std::size_t i) const;
  /// Validation target (Validation mode) or test window (Full mode).
  std::span<const double> target(std::size_t i) const;

 private:
  const SeriesSet* set_;
  SplitMode mode_;
  std::vector<std::size_t> members_;
};

SplitView split_train_validation(const SeriesSet& set, Diagnostics* diag = nullptr);
/// Dataset whose test windows are the validation windows: train loses its
/// last horizon, which becomes test. Series too short are dropped and counted.
SeriesSet holdout_set(const SeriesSet& set, Diagnostics* diag = nullptr);

// --- synthetic ---------------------------------------------------------------

struct SynthOptions {
  std::size_t count = 100;
  std::size_t length = 60;  // train + test
  std::size_t horizon = 6;
  std::size_t period = 4;
  int trend_degree = 1;
  double noise_level = 0.0;
  double amplitude = 1.0;
  double trend_scale = 1.0;
  double shift = 1.0;
  std::string tag = "Synthetic";
};

/// Polynomial trend + period-m sinusoid + uniform noise, shifted positive.
/// The last `horizon` points of each series become the test window.
SeriesSet synth_generate(const SynthOptions& opts, Rng& rng);

}  // namespace nbeats
