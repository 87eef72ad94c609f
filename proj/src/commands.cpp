#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "nbeats/cli.hpp"

namespace nbeats {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Context {
  RunConfig cfg;
  fs::path out;
};

Context prepare(const CommandOptions& opts) {
  Context ctx;
  ctx.cfg = load_run_config(opts.config);
  if (opts.seed) ctx.cfg.seed = *opts.seed;
  ctx.out = opts.out ? *opts.out : fs::path(ctx.cfg.out);
  fs::create_directories(ctx.out);
  return ctx;
}

std::string member_stem(const MemberSpec& spec) {
  const std::string name = member_file_name(spec);
  return name.substr(0, name.size() - 4);
}

void merge_into(ForecastMap& all, const ForecastMap& part, const std::string& origin) {
  for (const auto& [id, f] : part) {
    if (!all.emplace(id, f).second) throw std::invalid_argument("series '" + id + "' forecast twice (" + origin + ")");
  }
}

std::string safe_file_name(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return out;
}

std::vector<fs::path> weight_files(const std::string& source) {
  const fs::path p(source);
  if (!fs::exists(p)) throw std::runtime_error("file not found: " + source);
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".nbw") files.push_back(e.path());
    }
    if (files.empty()) throw std::runtime_error("no weight files under " + source);
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(p);
  }
  return files;
}

/// The frequency a weight file belongs to: its directory name when that is a
/// frequency tag, else the only frequency with a matching horizon.
std::string model_frequency(const fs::path& file, const ModelConfig& cfg, const SeriesSet& set) {
  const std::string dir = file.parent_path().filename().string();
  const auto tags = set.present_frequencies();
  if (std::find(tags.begin(), tags.end(), dir) != tags.end()) return dir;
  std::vector<std::string> match;
  for (const auto& t : tags) {
    if (set.frequency(t).horizon == cfg.horizon) match.push_back(t);
  }
  if (match.size() != 1) {
    throw std::invalid_argument("cannot tell which frequency " + file.string() + " (horizon " +
                                std::to_string(cfg.horizon) + ") forecasts");
  }
  return match.front();
}

ForecastMap model_forecasts(const std::vector<fs::path>& files, const SeriesSet& set) {
  std::map<std::string, std::vector<ForecastMap>> by_tag;
  for (const auto& file : files) {
    auto [cfg, params] = load_params(file);
    const std::string tag = model_frequency(file, cfg, set);
    const SeriesSet sub = set.subset(tag);
    const SplitView view(sub, SplitMode::Full);
    by_tag[tag].push_back(forecast_view(view, Network(cfg), params));
  }
  ForecastMap all;
  for (const auto& [tag, maps] : by_tag) {
    std::vector<const ForecastMap*> ptrs;
    for (const auto& m : maps) ptrs.push_back(&m);
    merge_into(all, aggregate_median(ptrs), tag);
  }
  return all;
}

ForecastMap baseline_forecasts(const std::string& name, const SeriesSet& set, Diagnostics* diag) {
  const SplitView view(set, SplitMode::Full);
  if (name == "naive2") return naive2_forecasts(view, diag);
  ForecastMap out;
  for (std::size_t i = 0; i < view.series_count(); ++i) {
    const auto& s = set.series[view.series_index(i)];
    const std::size_t h = set.horizon_of(s);
    const Vector f = name == "snaive" ? snaive_forecast(view.visible(i), set.periodicity_of(s), h)
                                      : naive_forecast(view.visible(i), h);
    out[s.id] = std::vector<double>(f.values().begin(), f.values().end());
  }
  return out;
}

double metric_value(const MetricSummary& m, MetricName metric) {
  switch (metric) {
    case MetricName::Smape: return m.smape;
    case MetricName::SmapeM3: return m.smape_m3;
    case MetricName::Mape: return m.mape;
    case MetricName::Mase: return m.mase;
    case MetricName::Owa: return m.owa;
    case MetricName::Nd: break;
  }
  throw std::logic_error("metric_value: ND is computed separately");
}

double nd_for(const SeriesSet& set, const ForecastMap& forecasts, const std::string& tag) {
  std::vector<std::vector<double>> f, y;
  for (const auto& s : set.series) {
    if (!tag.empty() && s.frequency != tag) continue;
    f.push_back(forecasts.at(s.id));
    y.push_back(s.test);
  }
  return nd_metric(f, y);
}

void write_ablation_csv(const std::vector<AblationRow>& rows, AblationAxis axis, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "axis,setting,frequency,count,smape,smape_m3,mape,mase,owa\n";
  for (const auto& r : rows) {
    const auto& m = r.summary;
    out << to_string(axis) << ',' << r.setting << ',' << r.frequency << ',' << m.count << ','
        << format_double(m.smape) << ',' << format_double(m.smape_m3) << ',' << format_double(m.mape) << ','
        << format_double(m.mase) << ',' << format_double(m.owa) << '\n';
  }
}

std::string first_line(std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  return msg;
}

}  // namespace

MetricName parse_metric(std::string_view text) {
  const std::string v = lower(text);
  if (v == "smape") return MetricName::Smape;
  if (v == "smape_m3" || v == "smape-m3") return MetricName::SmapeM3;
  if (v == "mape") return MetricName::Mape;
  if (v == "mase") return MetricName::Mase;
  if (v == "owa") return MetricName::Owa;
  if (v == "nd") return MetricName::Nd;
  throw std::invalid_argument("unknown metric '" + std::string(text) + "'");
}

std::string_view to_string(MetricName metric) {
  switch (metric) {
    case MetricName::Smape: return "smape";
    case MetricName::SmapeM3: return "smape_m3";
    case MetricName::Mape: return "mape";
    case MetricName::Mase: return "mase";
    case MetricName::Owa: return "owa";
    case MetricName::Nd: return "nd";
  }
  return "?";
}

AblationAxis parse_axis(std::string_view text) {
  const std::string v = lower(text);
  if (v == "stacks") return AblationAxis::Stacks;
  if (v == "basis") return AblationAxis::Basis;
  if (v == "topology") return AblationAxis::Topology;
  if (v == "ensemble_size" || v == "ensemble-size") return AblationAxis::EnsembleSize;
  throw std::invalid_argument("unknown axis '" + std::string(text) +
                              "' (expected stacks, basis, topology or ensemble_size)");
}

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Stacks: return "stacks";
    case AblationAxis::Basis: return "basis";
    case AblationAxis::Topology: return "topology";
    case AblationAxis::EnsembleSize: return "ensemble_size";
  }
  return "?";
}

void cmd_train(const CommandOptions& opts, std::ostream& log) {
  const Context ctx = prepare(opts);
  const SeriesSet set = load_run_dataset(ctx.cfg);
  {
    std::ofstream cfg_out(ctx.out / "run.cfg", std::ios::trunc);
    cfg_out << serialize_run_config(ctx.cfg);
  }
  ForecastMap all;
  for (const auto& tag : set.present_frequencies()) {
    const SeriesSet sub = set.subset(tag);
    const EnsembleSpec spec = ctx.cfg.ensemble_spec(sub.frequency(tag).horizon);
    const fs::path dir = ctx.out / tag;
    fs::create_directories(dir);
    const MemberHook hook = [&](const MemberSpec& m, const TrainResult& trained) {
      const std::string stem = member_stem(m);
      save_params(trained.params, m.config, dir / (stem + ".nbw"));
      write_train_log(trained.log, dir / (stem + "_log.csv"));
    };
    MemberForecasts members = train_ensemble(spec, sub, opts.workers, hook);
    for (auto& m : members.members) {
      if (m.ok) m.weights = member_stem(m.spec) + ".nbw";
    }
    write_member_forecasts(members, dir);
    const ForecastMap median = aggregate_median(members);
    write_forecasts_csv(median, dir / "forecast.csv");
    merge_into(all, median, tag);
    log << tag << ": " << members.survivors() << " of " << members.members.size() << " members trained\n";
  }
  write_forecasts_csv(all, ctx.out / "forecast.csv");
}

EvalReport cmd_evaluate(const EvaluateOptions& opts, std::ostream& out) {
  const Context ctx = prepare(opts.common);
  const SeriesSet set = load_run_dataset(ctx.cfg);
  if (opts.sources.empty()) throw std::invalid_argument("evaluate: no forecast source given");

  Diagnostics diag;
  ForecastMap forecasts;
  std::vector<fs::path> weights;
  for (const auto& src : opts.sources) {
    const std::string name = lower(src);
    if (name == "naive" || name == "snaive" || name == "naive2") {
      merge_into(forecasts, baseline_forecasts(name, set, &diag), src);
    } else if (fs::is_directory(src) && fs::exists(fs::path(src) / "forecast.csv")) {
      merge_into(forecasts, read_forecasts_csv(fs::path(src) / "forecast.csv"), src);
    } else if (fs::path(src).extension() == ".nbw" || fs::is_directory(src)) {
      for (auto& w : weight_files(src)) weights.push_back(std::move(w));
    } else {
      if (!fs::exists(src)) throw std::runtime_error("file not found: " + src);
      merge_into(forecasts, read_forecasts_csv(src), src);
    }
  }
  if (!weights.empty()) merge_into(forecasts, model_forecasts(weights, set), "weight files");

  std::map<std::string, Naive2Baseline> external;
  if (lower(opts.naive2) != "internal") external = read_naive2_csv(opts.naive2);

  EvalReport report = evaluate(set, forecasts, external);
  report.diag.merge(diag);
  write_report_csv(report, ctx.out / "report.csv");

  out << "name," << to_string(opts.metric) << '\n';
  for (const auto& s : report.subsets) {
    const double v = opts.metric == MetricName::Nd ? nd_for(set, forecasts, s.name) : metric_value(s, opts.metric);
    out << s.name << ',' << format_double(v) << '\n';
  }
  const double v = opts.metric == MetricName::Nd ? nd_for(set, forecasts, "") : metric_value(report.overall, opts.metric);
  out << report.overall.name << ',' << format_double(v) << '\n';
  return report;
}

void cmd_decompose(const DecomposeOptions& opts, std::ostream& log) {
  const Context ctx = prepare(opts.common);
  const SeriesSet set = load_run_dataset(ctx.cfg);
  if (opts.models.empty()) throw std::invalid_argument("decompose: no model given");
  if (opts.series.empty()) throw std::invalid_argument("decompose: no series given");

  struct Loaded {
    fs::path file;
    ModelConfig cfg;
    ParamStore params;
  };
  std::vector<Loaded> models;
  for (const auto& src : opts.models) {
    for (const auto& file : weight_files(src)) {
      auto [cfg, params] = load_params(file);
      if (cfg.stacks.size() < 2) {
        throw std::invalid_argument("decompose: " + file.string() + " has fewer than two stacks");
      }
      models.push_back({file, std::move(cfg), std::move(params)});
    }
  }

  for (const auto& id : opts.series) {
    const auto idx = set.find(id);
    if (!idx) throw std::invalid_argument("decompose: unknown series '" + id + "'");
    const Series& s = set.series[*idx];
    const std::size_t h = set.horizon_of(s);

    std::vector<const Loaded*> usable;
    for (const auto& m : models) {
      if (m.cfg.horizon == h && model_frequency(m.file, m.cfg, set) == s.frequency) usable.push_back(&m);
    }
    if (usable.empty()) throw std::invalid_argument("decompose: no model forecasts series '" + id + "'");
    const std::size_t k = usable.front()->cfg.stacks.size();

    Matrix forecast(1, h);
    Matrix partial(k, h);
    for (const Loaded* m : usable) {
      if (m->cfg.stacks.size() != k) throw std::invalid_argument("decompose: models disagree on stack count");
      const std::size_t len = m->cfg.input_len();
      Matrix x(1, len);
      const std::size_t take = std::min(len, s.train.size());
      for (std::size_t j = 0; j < take; ++j) x(0, len - take + j) = s.train[s.train.size() - take + j];
      const ForwardTrace trace = Network(m->cfg).forward(x, m->params);
      for (std::size_t t = 0; t < h; ++t) {
        forecast(0, t) += trace.forecast(0, t);
        for (std::size_t j = 0; j < k; ++j) partial(j, t) += trace.stack_forecasts[j](0, t);
      }
    }

    const double scale = *std::max_element(s.test.begin(), s.test.end());
    if (!(scale > 0.0)) throw std::invalid_argument("decompose: series '" + id + "' has no positive actual value");
    const double denom = scale * static_cast<double>(usable.size());

    const fs::path path = ctx.out / (safe_file_name(id) + ".csv");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "t,ACTUAL,FORECAST";
    for (std::size_t j = 0; j < k; ++j) out << ",STACK" << j + 1;
    out << '\n';
    for (std::size_t t = 0; t < h; ++t) {
      out << t << ',' << format_double(s.test[t] / scale) << ',' << format_double(forecast(0, t) / denom);
      for (std::size_t j = 0; j < k; ++j) out << ',' << format_double(partial(j, t) / denom);
      out << '\n';
    }
    log << id << ": " << usable.size() << " model(s) -> " << path.string() << '\n';
  }
}

std::vector<AblationRow> cmd_ablate(const AblateOptions& opts, std::ostream& log) {
  const Context ctx = prepare(opts.common);
  const SeriesSet full = load_run_dataset(ctx.cfg);
  Diagnostics diag;
  const SeriesSet hold = holdout_set(full, &diag);

  std::vector<AblationRow> rows;
  for (const auto& tag : hold.present_frequencies()) {
    const SeriesSet sub = hold.subset(tag);
    const std::size_t h = sub.frequency(tag).horizon;
    auto run = [&](const RunConfig& c, const std::string& setting) {
      const MemberForecasts members = train_ensemble(c.ensemble_spec(h), sub, opts.common.workers);
      const EvalReport report = evaluate(sub, aggregate_median(members));
      rows.push_back({setting, tag, report.overall});
      log << tag << ' ' << to_string(opts.axis) << '=' << setting << ": smape " << format_double(report.overall.smape)
          << '\n';
    };
    switch (opts.axis) {
      case AblationAxis::Stacks:
        for (std::size_t n : ctx.cfg.ablate_stacks) {
          RunConfig c = ctx.cfg;
          c.preset = Preset::Generic;
          c.stacks = n;
          run(c, std::to_string(n));
        }
        break;
      case AblationAxis::Basis:
        for (const auto& [t, s] : ctx.cfg.ablate_basis) {
          RunConfig c = ctx.cfg;
          c.preset = Preset::Interpretable;
          c.t_blocks = t;
          c.s_blocks = s;
          run(c, std::to_string(t) + ":" + std::to_string(s));
        }
        break;
      case AblationAxis::Topology:
        for (Topology t : ctx.cfg.ablate_topology) {
          RunConfig c = ctx.cfg;
          c.topology = t;
          run(c, std::string(to_string(t)));
        }
        break;
      case AblationAxis::EnsembleSize: {
        const MemberForecasts members = train_ensemble(ctx.cfg.ensemble_spec(h), sub, opts.common.workers);
        const SplitView view(sub, SplitMode::Full);
        for (auto& sweep : ensemble_size_sweep(members, ctx.cfg.ablate_ensemble_size, view)) {
          rows.push_back({std::to_string(sweep.size), tag, sweep.report.overall});
          log << tag << " ensemble_size=" << sweep.size << ": smape " << format_double(sweep.report.overall.smape)
              << '\n';
        }
        break;
      }
    }
  }
  write_ablation_csv(rows, opts.axis, ctx.out / ("ablation_" + std::string(to_string(opts.axis)) + ".csv"));
  return rows;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"N-BEATS training, evaluation, decomposition and ablation"};
  app.require_subcommand(1);

  CommandOptions common;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::string out;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "run configuration file")->required();
    sub->add_option("--workers", workers, "parallel ensemble members")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "overrides the configured seed");
    sub->add_option("--out", out, "output directory");
  };

  auto* train = app.add_subcommand("train", "train a model or ensemble");
  add_common(train);

  EvaluateOptions eval;
  std::string metric = "smape";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score forecasts against the test windows");
  add_common(evaluate_cmd);
  evaluate_cmd->add_option("sources", eval.sources, "forecast CSVs, weight files, train output dirs, or naive/snaive/naive2")
      ->required();
  evaluate_cmd->add_option("--metric", metric, "smape, smape_m3, mape, mase, owa or nd");
  evaluate_cmd->add_option("--naive2", eval.naive2, "internal or a per-frequency baseline CSV");

  DecomposeOptions decompose;
  auto* decompose_cmd = app.add_subcommand("decompose", "per-stack forecast traces");
  add_common(decompose_cmd);
  decompose_cmd->add_option("models", decompose.models, "weight files or train output dirs")->required();
  decompose_cmd->add_option("--series", decompose.series, "series ids")->delimiter(',')->required();

  AblateOptions ablate;
  std::string axis;
  auto* ablate_cmd = app.add_subcommand("ablate", "compare settings along one axis");
  add_common(ablate_cmd);
  ablate_cmd->add_option("--axis", axis, "stacks, basis, topology or ensemble_size")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "nbeats: " << first_line(e.what()) << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    common.workers = workers;
    for (auto* sub : {train, evaluate_cmd, decompose_cmd, ablate_cmd}) {
      if (sub->get_option("--seed")->count() > 0) common.seed = seed;
      if (sub->get_option("--out")->count() > 0) common.out = out;
    }
    if (*train) {
      cmd_train(common, std::cout);
    } else if (*evaluate_cmd) {
      eval.common = common;
      eval.metric = parse_metric(metric);
      cmd_evaluate(eval, std::cout);
    } else if (*decompose_cmd) {
      decompose.common = common;
      cmd_decompose(decompose, std::cout);
    } else if (*ablate_cmd) {
      ablate.common = common;
      ablate.axis = parse_axis(axis);
      cmd_ablate(ablate, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "nbeats: error: " << first_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace nbeats
