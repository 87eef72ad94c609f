#include "nbeats/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nbeats {

std::uint64_t member_seed(std::uint64_t base_seed, LossKind loss, std::size_t lookback, std::size_t repeat) {
  std::uint64_t h = mix64(base_seed);
  h = mix64(h ^ (static_cast<std::uint64_t>(loss) + 1));
  h = mix64(h ^ static_cast<std::uint64_t>(lookback));
  h = mix64(h ^ static_cast<std::uint64_t>(repeat));
  return h;
}

std::vector<MemberSpec> expand_spec(const EnsembleSpec& spec) {
  if (spec.losses.empty()) throw std::invalid_argument("expand_spec: no losses given");
  if (spec.lookbacks.empty()) throw std::invalid_argument("expand_spec: no lookback multiples given");
  if (spec.repeats == 0) throw std::invalid_argument("expand_spec: repeats must be >= 1");
  std::vector<MemberSpec> out;
  for (LossKind loss : spec.losses) {
    for (std::size_t lookback : spec.lookbacks) {
      for (std::size_t r = 0; r < spec.repeats; ++r) {
        MemberSpec m;
        m.index = out.size();
        m.loss = loss;
        m.lookback = lookback;
        m.repeat = r;
        m.seed = member_seed(spec.plan.seed, loss, lookback, r);
        m.config = spec.base.with_lookback(lookback);
        m.plan = spec.plan;
        m.plan.loss = loss;
        m.plan.lookback_multiple = lookback;
        m.plan.seed = m.seed;
        out.push_back(std::move(m));
      }
    }
  }
  return out;
}

std::size_t MemberForecasts::survivors() const {
  return static_cast<std::size_t>(std::count_if(members.begin(), members.end(), [](const auto& m) { return m.ok; }));
}

MemberForecasts train_ensemble(const EnsembleSpec& spec, const SeriesSet& set, std::size_t worker_count,
                               const MemberHook& hook) {
  const auto specs = expand_spec(spec);
  MemberForecasts result;
  result.members.resize(specs.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      MemberResult& r = result.members[i];
      r.spec = specs[i];
      try {
        const TrainResult trained = train_model(set, r.spec.config, r.spec.plan);
        if (hook) hook(r.spec, trained);
        const SplitView view(set, SplitMode::Full);
        r.forecasts = forecast_view(view, Network(r.spec.config), trained.params);
        r.ok = true;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(worker_count, 1, std::max<std::size_t>(specs.size(), 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  const std::size_t ok = result.survivors();
  if (2 * ok < specs.size()) {
    std::string first_error;
    for (const auto& m : result.members) {
      if (!m.ok) {
        first_error = m.error;
        break;
      }
    }
    throw std::runtime_error("train_ensemble: only " + std::to_string(ok) + " of " + std::to_string(specs.size()) +
                             " members succeeded; first error: " + first_error);
  }
  return result;
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median_of: no values");
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

ForecastMap aggregate_median(const std::vector<const ForecastMap*>& members) {
  if (members.empty()) throw std::invalid_argument("aggregate_median: no members");
  const ForecastMap& first = *members.front();
  for (const ForecastMap* m : members) {
    if (m->size() != first.size()) throw std::invalid_argument("aggregate_median: members cover different series");
    for (const auto& [id, f] : first) {
      auto it = m->find(id);
      if (it == m->end()) throw std::invalid_argument("aggregate_median: series '" + id + "' missing from a member");
      if (it->second.size() != f.size()) {
        throw std::invalid_argument("aggregate_median: horizon mismatch for series '" + id + "'");
      }
    }
  }
  ForecastMap out;
  std::vector<double> column(members.size());
  for (const auto& [id, f] : first) {
    std::vector<double> agg(f.size());
    for (std::size_t t = 0; t < f.size(); ++t) {
      for (std::size_t k = 0; k < members.size(); ++k) column[k] = members[k]->at(id)[t];
      agg[t] = median_of(column);
    }
    out.emplace(id, std::move(agg));
  }
  return out;
}

ForecastMap aggregate_median(const MemberForecasts& members) {
  std::vector<const ForecastMap*> ptrs;
  for (const auto& m : members.members) {
    if (m.ok) ptrs.push_back(&m.forecasts);
  }
  return aggregate_median(ptrs);
}

std::vector<SweepRow> ensemble_size_sweep(const MemberForecasts& members, const std::vector<std::size_t>& sizes,
                                          const SplitView& view) {
  std::vector<const ForecastMap*> ptrs;
  for (const auto& m : members.members) {
    if (m.ok) ptrs.push_back(&m.forecasts);
  }
  std::vector<SweepRow> rows;
  for (std::size_t size : sizes) {
    if (size == 0) throw std::invalid_argument("ensemble_size_sweep: size 0");
    if (size > ptrs.size()) {
      throw std::invalid_argument("ensemble_size_sweep: size " + std::to_string(size) + " exceeds " +
                                  std::to_string(ptrs.size()) + " members");
    }
    const std::vector<const ForecastMap*> head(ptrs.begin(), ptrs.begin() + static_cast<std::ptrdiff_t>(size));
    rows.push_back({size, evaluate(view, aggregate_median(head))});
  }
  return rows;
}

// --- persistence -------------------------------------------------------------

void write_forecasts_csv(const ForecastMap& forecasts, const std::filesystem::path& path) {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  for (const auto& [id, f] : forecasts) {
    ids.push_back(id);
    rows.push_back(f);
  }
  write_series_csv(path, ids, rows);
}

ForecastMap read_forecasts_csv(const std::filesystem::path& path) {
  ForecastMap out;
  for (auto& row : read_series_csv(path)) {
    if (!out.emplace(row.id, std::move(row.values)).second) {
      throw std::runtime_error(path.string() + ":" + std::to_string(row.line) + ": duplicate series '" + row.id + "'");
    }
  }
  return out;
}

std::string member_file_name(const MemberSpec& spec) {
  std::ostringstream os;
  os << "member_";
  os.width(3);
  os.fill('0');
  os << spec.index;
  return os.str() + ".csv";
}

void write_member_forecasts(const MemberForecasts& members, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "member,loss,lookback,repeat,seed,file,weights,status\n";
  for (const auto& m : members.members) {
    const std::string file = member_file_name(m.spec);
    if (m.ok) write_forecasts_csv(m.forecasts, dir / file);
    manifest << m.spec.index << ',' << to_string(m.spec.loss) << ',' << m.spec.lookback << ',' << m.spec.repeat << ','
             << m.spec.seed << ',' << (m.ok ? file : std::string()) << ',' << m.weights << ','
             << (m.ok ? "ok" : "failed") << '\n';
  }
}

MemberForecasts read_member_forecasts(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw std::runtime_error("no manifest.csv in " + dir.string());
  MemberForecasts out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw std::runtime_error("manifest.csv: malformed row '" + line + "'");
    MemberResult r;
    r.spec.index = std::stoul(cells[0]);
    r.spec.loss = parse_loss(cells[1]);
    r.spec.lookback = std::stoul(cells[2]);
    r.spec.repeat = std::stoul(cells[3]);
    r.spec.seed = std::stoull(cells[4]);
    r.weights = cells[6];
    r.ok = cells[7] == "ok";
    if (r.ok) r.forecasts = read_forecasts_csv(dir / cells[5]);
    out.members.push_back(std::move(r));
  }
  return out;
}

}  // namespace nbeats
