#include "nbeats/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace nbeats {

void Diagnostics::merge(const Diagnostics& other) {
  short_validation += other.short_validation;
  short_history += other.short_history;
  naive2_fallback += other.naive2_fallback;
  zero_denominator += other.zero_denominator;
  undefined_mase += other.undefined_mase;
}

const FrequencyInfo& SeriesSet::frequency(const std::string& tag) const {
  for (const auto& f : frequencies) {
    if (f.tag == tag) return f;
  }
  throw std::invalid_argument("unknown frequency tag '" + tag + "'");
}

std::optional<std::size_t> SeriesSet::find(const std::string& id) const {
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].id == id) return i;
  }
  return std::nullopt;
}

SeriesSet SeriesSet::subset(const std::string& tag) const {
  SeriesSet out;
  out.frequencies.push_back(frequency(tag));
  for (const auto& s : series) {
    if (s.frequency == tag) out.series.push_back(s);
  }
  return out;
}

std::vector<std::string> SeriesSet::present_frequencies() const {
  std::vector<std::string> tags;
  for (const auto& f : frequencies) {
    const bool any = std::any_of(series.begin(), series.end(), [&](const Series& s) { return s.frequency == f.tag; });
    if (any) tags.push_back(f.tag);
  }
  return tags;
}

// --- csv ---------------------------------------------------------------------

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  for (auto& s : cells) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return cells;
}

std::optional<double> parse_number(const std::string& cell) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

double require_number(const std::string& cell, const std::filesystem::path& path, std::size_t line,
                      std::size_t column) {
  auto v = parse_number(cell);
  if (!v || !std::isfinite(*v)) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": non-numeric cell '" + cell +
                             "' in column " + std::to_string(column));
  }
  return *v;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::vector<std::vector<std::string>> read_cells(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(split_cells(line));
  return rows;
}

void trim_trailing_empty(std::vector<std::string>& cells) {
  while (!cells.empty() && cells.back().empty()) cells.pop_back();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::vector<CsvRow> read_series_csv(const std::filesystem::path& path, bool skip_header) {
  auto in = open_or_throw(path);
  std::vector<CsvRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_header && line_no == 1) continue;
    auto cells = split_cells(line);
    trim_trailing_empty(cells);
    if (cells.empty()) continue;
    CsvRow row;
    row.line = line_no;
    row.id = cells[0];
    if (row.id.empty()) throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": empty id");
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": empty cell in column " +
                                 std::to_string(c + 1));
      }
      row.values.push_back(require_number(cells[c], path, line_no, c + 1));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_series_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                      const std::vector<std::vector<double>>& rows) {
  if (ids.size() != rows.size()) throw std::invalid_argument("write_series_csv: ids/rows size mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    for (double v : rows[i]) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<FrequencyInfo> read_meta(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<FrequencyInfo> meta;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto cells = split_cells(line);
    trim_trailing_empty(cells);
    if (cells.empty() || cells[0].starts_with('#')) continue;
    if (cells[0] == "frequency") continue;
    if (cells.size() < 3 || cells.size() > 4) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected frequency,horizon,periodicity[,id_prefix]");
    }
    FrequencyInfo f;
    f.tag = cells[0];
    const double h = require_number(cells[1], path, line_no, 2);
    const double m = require_number(cells[2], path, line_no, 3);
    if (h < 1 || m < 1 || h != std::floor(h) || m != std::floor(m)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": horizon and periodicity must be positive integers");
    }
    f.horizon = static_cast<std::size_t>(h);
    f.periodicity = static_cast<std::size_t>(m);
    f.id_prefix = cells.size() == 4 ? cells[3] : f.tag;
    meta.push_back(f);
  }
  if (meta.empty()) throw std::runtime_error(path.string() + ": no frequencies defined");
  return meta;
}

void write_meta(const std::filesystem::path& path, const std::vector<FrequencyInfo>& meta) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& f : meta) {
    out << f.tag << ',' << f.horizon << ',' << f.periodicity;
    if (f.id_prefix != f.tag) out << ',' << f.id_prefix;
    out << '\n';
  }
}

std::vector<FrequencyInfo> m3_meta() {
  return {{"Yearly", 6, 1, "N"}, {"Quarterly", 8, 4, "N"}, {"Monthly", 18, 12, "N"}, {"Other", 8, 1, "N"}};
}

std::vector<FrequencyInfo> m4_meta() {
  return {{"Yearly", 6, 1, "Y"},  {"Quarterly", 8, 4, "Q"}, {"Monthly", 18, 12, "M"},
          {"Weekly", 13, 1, "W"}, {"Daily", 14, 1, "D"},    {"Hourly", 48, 24, "H"}};
}

std::vector<FrequencyInfo> tourism_meta() {
  return {{"Yearly", 4, 1, "Y"}, {"Quarterly", 8, 4, "Q"}, {"Monthly", 24, 12, "M"}};
}

namespace {

const FrequencyInfo* resolve_frequency(const std::vector<FrequencyInfo>& meta, const std::string& id) {
  if (meta.size() == 1) return &meta.front();
  const FrequencyInfo* best = nullptr;
  for (const auto& f : meta) {
    if (id.starts_with(f.id_prefix) && (best == nullptr || f.id_prefix.size() > best->id_prefix.size())) {
      best = &f;
    }
  }
  return best;
}

}  // namespace

SeriesSet load_dataset(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                       const std::vector<FrequencyInfo>& meta, bool skip_header) {
  if (meta.empty()) throw std::invalid_argument("load_dataset: empty frequency metadata");
  const auto train_rows = read_series_csv(train_csv, skip_header);
  const auto test_rows = read_series_csv(test_csv, skip_header);
  if (train_rows.size() != test_rows.size()) {
    throw std::runtime_error("load_dataset: " + std::to_string(train_rows.size()) + " train rows but " +
                             std::to_string(test_rows.size()) + " test rows");
  }
  SeriesSet set;
  set.frequencies = meta;
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    const auto& tr = train_rows[i];
    const auto& te = test_rows[i];
    if (tr.id != te.id) {
      throw std::runtime_error("load_dataset: id mismatch at row " + std::to_string(tr.line) + ": train '" +
                               tr.id + "' vs test '" + te.id + "' (line " + std::to_string(te.line) + ")");
    }
    const FrequencyInfo* f = resolve_frequency(meta, tr.id);
    if (f == nullptr) {
      throw std::runtime_error(train_csv.string() + ":" + std::to_string(tr.line) +
                               ": unknown frequency tag for id '" + tr.id + "'");
    }
    if (tr.values.empty()) {
      throw std::runtime_error(train_csv.string() + ":" + std::to_string(tr.line) + ": series '" + tr.id +
                               "' has no train values");
    }
    if (te.values.size() != f->horizon) {
      throw std::runtime_error(test_csv.string() + ":" + std::to_string(te.line) + ": series '" + te.id +
                               "' has " + std::to_string(te.values.size()) + " test values, expected " +
                               std::to_string(f->horizon));
    }
    set.series.push_back({tr.id, f->tag, tr.values, te.values});
  }
  return set;
}

SeriesSet load_dataset(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                       const std::filesystem::path& meta) {
  if (!std::filesystem::exists(meta)) throw std::runtime_error("metadata file not found: " + meta.string());
  return load_dataset(train_csv, test_csv, read_meta(meta));
}

void save_dataset(const SeriesSet& set, const std::filesystem::path& train_csv,
                  const std::filesystem::path& test_csv, const std::filesystem::path& meta) {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> train, test;
  for (const auto& s : set.series) {
    ids.push_back(s.id);
    train.push_back(s.train);
    test.push_back(s.test);
  }
  write_series_csv(train_csv, ids, train);
  write_series_csv(test_csv, ids, test);
  write_meta(meta, set.frequencies);
}

SeriesSet load_m4(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                  const std::vector<FrequencyInfo>& meta) {
  return load_dataset(train_csv, test_csv, meta, /*skip_header=*/true);
}

SeriesSet load_m3_sheet(const std::filesystem::path& csv, const FrequencyInfo& frequency) {
  const auto rows = read_cells(csv);
  if (rows.empty()) throw std::runtime_error(csv.string() + ": empty file");
  const auto& header = rows.front();
  std::size_t n_col = header.size(), nf_col = header.size(), first_value = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "N") n_col = c;
    if (header[c] == "NF") nf_col = c;
    if (first_value == header.size() && header[c] == "1") first_value = c;
  }
  if (n_col == header.size() || nf_col == header.size() || first_value == header.size()) {
    throw std::runtime_error(csv.string() + ": expected M3 header with Series, N, NF and value columns 1..N");
  }
  SeriesSet set;
  set.frequencies = {frequency};
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto cells = rows[r];
    trim_trailing_empty(cells);
    if (cells.empty()) continue;
    const std::size_t line = r + 1;
    const auto n = static_cast<std::size_t>(require_number(cells.at(n_col), csv, line, n_col + 1));
    const auto nf = static_cast<std::size_t>(require_number(cells.at(nf_col), csv, line, nf_col + 1));
    if (nf != frequency.horizon) {
      throw std::runtime_error(csv.string() + ":" + std::to_string(line) + ": NF " + std::to_string(nf) +
                               " differs from horizon " + std::to_string(frequency.horizon));
    }
    if (cells.size() < first_value + n || n <= nf) {
      throw std::runtime_error(csv.string() + ":" + std::to_string(line) + ": series '" + cells[0] +
                               "' shorter than its N");
    }
    Series s;
    s.id = cells[0];
    s.frequency = frequency.tag;
    for (std::size_t k = 0; k < n; ++k) {
      const double v = require_number(cells[first_value + k], csv, line, first_value + k + 1);
      (k < n - nf ? s.train : s.test).push_back(v);
    }
    set.series.push_back(std::move(s));
  }
  return set;
}

namespace {

std::vector<std::pair<std::string, std::vector<double>>> read_tourism_columns(const std::filesystem::path& path) {
  const auto rows = read_cells(path);
  if (rows.size() < 3) throw std::runtime_error(path.string() + ": expected id, length and start rows");
  const auto& ids = rows[0];
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (std::size_t c = 0; c < ids.size(); ++c) {
    if (ids[c].empty()) continue;
    const auto len = static_cast<std::size_t>(require_number(rows[1].at(c), path, 2, c + 1));
    std::vector<double> values;
    for (std::size_t r = 3; r < rows.size() && values.size() < len; ++r) {
      if (c < rows[r].size() && !rows[r][c].empty()) values.push_back(require_number(rows[r][c], path, r + 1, c + 1));
    }
    if (values.size() != len) {
      throw std::runtime_error(path.string() + ": column '" + ids[c] + "' has " + std::to_string(values.size()) +
                               " values, header says " + std::to_string(len));
    }
    out.emplace_back(ids[c], std::move(values));
  }
  return out;
}

}  // namespace

SeriesSet load_tourism(const std::filesystem::path& train_csv, const std::filesystem::path& test_csv,
                       const FrequencyInfo& frequency) {
  auto train = read_tourism_columns(train_csv);
  auto test = read_tourism_columns(test_csv);
  if (train.size() != test.size()) throw std::runtime_error("load_tourism: train/test column counts differ");
  SeriesSet set;
  set.frequencies = {frequency};
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].first != test[i].first) {
      throw std::runtime_error("load_tourism: id mismatch '" + train[i].first + "' vs '" + test[i].first + "'");
    }
    auto fut = std::move(test[i].second);
    if (fut.size() < frequency.horizon) {
      throw std::runtime_error("load_tourism: series '" + train[i].first + "' test shorter than horizon");
    }
    fut.resize(frequency.horizon);
    set.series.push_back({train[i].first, frequency.tag, std::move(train[i].second), std::move(fut)});
  }
  return set;
}

// --- split -------------------------------------------------------------------

SplitView::SplitView(const SeriesSet& set, SplitMode mode, Diagnostics* diag) : set_(&set), mode_(mode) {
  for (std::size_t i = 0; i < set.series.size(); ++i) {
    const auto& s = set.series[i];
    if (mode == SplitMode::Validation && s.train.size() <= set.horizon_of(s)) {
      if (diag != nullptr) ++diag->short_validation;
      continue;
    }
    members_.push_back(i);
  }
}

std::size_t SplitView::length(std::size_t i) const {
  const auto& s = set_->series[members_.at(i)];
  return mode_ == SplitMode::Validation ? s.train.size() - set_->horizon_of(s) : s.train.size();
}

double SplitView::value(std::size_t i, std::size_t t) const {
  if (t >= length(i)) throw std::out_of_range("SplitView::value: read beyond the visible range");
  return set_->series[members_[i]].train[t];
}

std::size_t SplitView::periodicity(std::size_t i) const {
  return set_->periodicity_of(set_->series[members_.at(i)]);
}

std::span<const double> SplitView::visible(std::size_t i) const {
  return std::span<const double>(set_->series[members_.at(i)].train).first(length(i));
}

std::span<const double> SplitView::target(std::size_t i) const {
  const auto& s = set_->series[members_.at(i)];
  if (mode_ == SplitMode::Full) return s.test;
  return std::span<const double>(s.train).subspan(length(i));
}

SplitView split_train_validation(const SeriesSet& set, Diagnostics* diag) {
  return SplitView(set, SplitMode::Validation, diag);
}

SeriesSet holdout_set(const SeriesSet& set, Diagnostics* diag) {
  SeriesSet out;
  out.frequencies = set.frequencies;
  for (const auto& s : set.series) {
    const std::size_t h = set.horizon_of(s);
    if (s.train.size() <= h) {
      if (diag != nullptr) ++diag->short_validation;
      continue;
    }
    Series v;
    v.id = s.id;
    v.frequency = s.frequency;
    v.train.assign(s.train.begin(), s.train.end() - static_cast<std::ptrdiff_t>(h));
    v.test.assign(s.train.end() - static_cast<std::ptrdiff_t>(h), s.train.end());
    out.series.push_back(std::move(v));
  }
  return out;
}

// --- synthetic ---------------------------------------------------------------

SeriesSet synth_generate(const SynthOptions& opts, Rng& rng) {
  if (opts.length <= opts.horizon) throw std::invalid_argument("synth_generate: length must exceed horizon");
  if (opts.period < 1) throw std::invalid_argument("synth_generate: period must be >= 1");
  SeriesSet set;
  set.frequencies = {{opts.tag, opts.horizon, opts.period, opts.tag}};
  const std::size_t width = std::to_string(opts.count).size();
  for (std::size_t k = 0; k < opts.count; ++k) {
    std::vector<double> coeffs(static_cast<std::size_t>(std::max(opts.trend_degree, 0)) + 1);
    double coeff_abs = 0.0;
    for (std::size_t d = 1; d < coeffs.size(); ++d) {
      coeffs[d] = rng.uniform(-1.0, 1.0) * opts.trend_scale;
      coeff_abs += std::abs(coeffs[d]);
    }
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double level = opts.shift + coeff_abs + opts.amplitude;

    std::vector<double> values(opts.length);
    for (std::size_t t = 0; t < opts.length; ++t) {
      const double u = static_cast<double>(t) / static_cast<double>(opts.length);
      double trend = 0.0, power = 1.0;
      for (std::size_t d = 1; d < coeffs.size(); ++d) {
        power *= u;
        trend += coeffs[d] * power;
      }
      const double season =
          opts.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(opts.period) + phase);
      const double noise = opts.noise_level > 0.0 ? rng.uniform(-opts.noise_level, opts.noise_level) : 0.0;
      values[t] = level + trend + season + noise;
    }
    std::string id = std::to_string(k);
    id.insert(0, width - id.size(), '0');
    Series s;
    s.id = opts.tag + id;
    s.frequency = opts.tag;
    s.train.assign(values.begin(), values.end() - static_cast<std::ptrdiff_t>(opts.horizon));
    s.test.assign(values.end() - static_cast<std::ptrdiff_t>(opts.horizon), values.end());
    set.series.push_back(std::move(s));
  }
  return set;
}

}  // namespace nbeats
