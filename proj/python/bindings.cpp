#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "nbeats/cli.hpp"

namespace py = pybind11;
using namespace nbeats;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

Matrix to_matrix(const Array& a) {
  if (a.ndim() == 1) return Matrix(1, static_cast<std::size_t>(a.shape(0)), to_vector(a));
  if (a.ndim() != 2) throw py::value_error("expected a 1-D or 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data(), m.data() + m.size(), out.mutable_data());
  return out;
}

Array from_span(std::span<const double> s) {
  Array out(static_cast<py::ssize_t>(s.size()));
  std::copy(s.begin(), s.end(), out.mutable_data());
  return out;
}

struct Model {
  ModelConfig config;
  ParamStore params;
};

py::dict forecast_dict(const ForecastMap& f) {
  py::dict out;
  for (const auto& [id, v] : f) out[py::str(id)] = from_span(v);
  return out;
}

ForecastMap forecast_map(const py::dict& d) {
  ForecastMap out;
  for (const auto& [k, v] : d) out.emplace(py::cast<std::string>(k), to_vector(py::cast<Array>(v)));
  return out;
}

}  // namespace

PYBIND11_MODULE(_nbeats, m) {
  m.doc() = "N-BEATS forecasting: models, training, metrics and ensembles";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  py::enum_<Topology>(m, "Topology")
      .value("DRESS", Topology::Dress)
      .value("PARALLEL", Topology::Parallel)
      .value("NO_RESIDUAL", Topology::NoResidual)
      .value("LAST_FORWARD", Topology::LastForward)
      .value("NO_RESIDUAL_LAST_FORWARD", Topology::NoResidualLastForward)
      .value("RESIDUAL_INPUT", Topology::ResidualInput);

  py::enum_<LossKind>(m, "Loss")
      .value("SMAPE", LossKind::Smape)
      .value("MAPE", LossKind::Mape)
      .value("MASE", LossKind::Mase);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def_readwrite("topology", &ModelConfig::topology)
      .def_readonly("horizon", &ModelConfig::horizon)
      .def_readonly("lookback_multiple", &ModelConfig::lookback_multiple)
      .def_property_readonly("input_len", &ModelConfig::input_len)
      .def_property_readonly("stack_count", [](const ModelConfig& c) { return c.stacks.size(); })
      .def("with_lookback", &ModelConfig::with_lookback, py::arg("multiple"))
      .def("to_text", [](const ModelConfig& c) { return serialize_config(c); })
      .def_static("from_text", [](const std::string& t) { return parse_config(t); })
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; })
      .def("__repr__", [](const ModelConfig& c) { return serialize_config(c); });

  m.def("generic_preset", &generic_preset, py::arg("horizon"), py::arg("lookback_multiple") = 2,
        py::arg("stacks") = 30, py::arg("width") = 512, py::arg("blocks") = 1, py::arg("layers") = 4);
  m.def("interpretable_preset", &interpretable_preset, py::arg("horizon"), py::arg("lookback_multiple") = 2,
        py::arg("trend_width") = 256, py::arg("season_width") = 2048, py::arg("trend_blocks") = 3,
        py::arg("season_blocks") = 3, py::arg("trend_degree") = 2, py::arg("layers") = 4);

  m.def(
      "trend_basis",
      [](std::size_t backcast_len, std::size_t horizon, int degree) {
        const auto b = make_trend_basis(backcast_len, horizon, degree);
        return py::make_tuple(from_matrix(b.backcast), from_matrix(b.forecast));
      },
      py::arg("backcast_len"), py::arg("horizon"), py::arg("degree"));
  m.def(
      "fourier_basis",
      [](std::size_t backcast_len, std::size_t horizon) {
        const auto b = make_fourier_basis(backcast_len, horizon);
        return py::make_tuple(from_matrix(b.backcast), from_matrix(b.forecast));
      },
      py::arg("backcast_len"), py::arg("horizon"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const ModelConfig& cfg, std::uint64_t seed) {
             cfg.validate();
             Rng rng(seed);
             return Model{cfg, init_params(cfg, rng)};
           }),
           py::arg("config"), py::arg("seed") = 0)
      .def_readonly("config", &Model::config)
      .def_property_readonly("parameter_count", [](const Model& md) { return md.params.parameter_count(); })
      .def("parameters", [](const Model& md) { return from_span(md.params.flatten()); })
      .def("set_parameters", [](Model& md, const Array& flat) { md.params.assign(to_vector(flat)); })
      .def(
          "forecast",
          [](const Model& md, const Array& x) {
            const Matrix in = to_matrix(x);
            return from_matrix(Network(md.config).predict(in, md.params));
          },
          py::arg("x"), "Forecasts for a batch of lookback windows (rows).")
      .def(
          "decompose",
          [](const Model& md, const Array& x) {
            const auto trace = Network(md.config).forward(to_matrix(x), md.params);
            py::list stacks;
            for (const auto& s : trace.stack_forecasts) stacks.append(from_matrix(s));
            return py::make_tuple(from_matrix(trace.forecast), stacks);
          },
          py::arg("x"), "Forecast and the per-stack partial forecasts.")
      .def("save", [](const Model& md, const std::filesystem::path& p) { save_params(md.params, md.config, p); })
      .def_static("load", [](const std::filesystem::path& p) {
        auto [cfg, params] = load_params(p);
        return Model{std::move(cfg), std::move(params)};
      });

  py::class_<SeriesSet>(m, "SeriesSet")
      .def(py::init([](const std::string& tag, std::size_t horizon, std::size_t periodicity,
                       const std::vector<std::string>& ids, const std::vector<std::vector<double>>& train,
                       const std::vector<std::vector<double>>& test) {
             if (ids.size() != train.size() || ids.size() != test.size()) {
               throw py::value_error("ids, train and test must have the same length");
             }
             SeriesSet set;
             set.frequencies = {{tag, horizon, periodicity, tag}};
             for (std::size_t i = 0; i < ids.size(); ++i) {
               if (test[i].size() != horizon) throw py::value_error("series '" + ids[i] + "' test length != horizon");
               set.series.push_back({ids[i], tag, train[i], test[i]});
             }
             return set;
           }),
           py::arg("tag"), py::arg("horizon"), py::arg("periodicity"), py::arg("ids"), py::arg("train"),
           py::arg("test"))
      .def("__len__", &SeriesSet::size)
      .def_property_readonly("ids",
                             [](const SeriesSet& s) {
                               std::vector<std::string> ids;
                               for (const auto& x : s.series) ids.push_back(x.id);
                               return ids;
                             })
      .def_property_readonly("frequencies", &SeriesSet::present_frequencies)
      .def("subset", &SeriesSet::subset, py::arg("tag"))
      .def("train", [](const SeriesSet& s, const std::string& id) { return from_span(s.series.at(s.find(id).value()).train); })
      .def("test", [](const SeriesSet& s, const std::string& id) { return from_span(s.series.at(s.find(id).value()).test); })
      .def("holdout", [](const SeriesSet& s) { return holdout_set(s); })
      .def("save", [](const SeriesSet& s, const std::filesystem::path& train, const std::filesystem::path& test,
                      const std::filesystem::path& meta) { save_dataset(s, train, test, meta); });

  m.def("load_dataset",
        py::overload_cast<const std::filesystem::path&, const std::filesystem::path&, const std::filesystem::path&>(
            &load_dataset),
        py::arg("train"), py::arg("test"), py::arg("meta"));
  m.def(
      "synthetic",
      [](std::size_t count, std::size_t length, std::size_t horizon, std::size_t period, int trend_degree,
         double noise, std::uint64_t seed) {
        SynthOptions o;
        o.count = count;
        o.length = length;
        o.horizon = horizon;
        o.period = period;
        o.trend_degree = trend_degree;
        o.noise_level = noise;
        Rng rng(seed);
        return synth_generate(o, rng);
      },
      py::arg("count") = 100, py::arg("length") = 60, py::arg("horizon") = 6, py::arg("period") = 4,
      py::arg("trend_degree") = 1, py::arg("noise") = 0.0, py::arg("seed") = 0);

  m.def(
      "train",
      [](const SeriesSet& set, const ModelConfig& cfg, LossKind loss, std::size_t iterations, std::size_t batch_size,
         double lh, bool validate, std::uint64_t seed) {
        TrainPlan plan;
        plan.loss = loss;
        plan.iterations = iterations;
        plan.batch_size = batch_size;
        plan.lh = lh;
        plan.lookback_multiple = cfg.lookback_multiple;
        plan.validate = validate;
        plan.seed = seed;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_model(set, cfg, plan);
        }
        py::list log;
        for (const auto& row : r.log) log.append(py::make_tuple(row.iteration, row.train_loss, row.val_smape));
        return py::make_tuple(Model{cfg, std::move(r.params)}, log);
      },
      py::arg("set"), py::arg("config"), py::arg("loss") = LossKind::Smape, py::arg("iterations") = 100,
      py::arg("batch_size") = 1024, py::arg("lh") = 1.5, py::arg("validate") = true, py::arg("seed") = 0,
      "Trains one model; returns (model, [(iteration, train_loss, val_smape), ...]).");

  m.def(
      "predict",
      [](const Model& md, const SeriesSet& set) {
        return forecast_dict(forecast_view(SplitView(set, SplitMode::Full), Network(md.config), md.params));
      },
      py::arg("model"), py::arg("set"), "Forecasts of every series from the end of its train range.");

  m.def(
      "train_ensemble",
      [](const SeriesSet& set, const ModelConfig& base, std::vector<LossKind> losses, std::vector<std::size_t> lookbacks,
         std::size_t repeats, std::size_t iterations, std::size_t batch_size, double lh, bool validate,
         std::uint64_t seed, std::size_t workers) {
        EnsembleSpec spec;
        spec.losses = std::move(losses);
        spec.lookbacks = std::move(lookbacks);
        spec.repeats = repeats;
        spec.base = base;
        spec.plan.iterations = iterations;
        spec.plan.batch_size = batch_size;
        spec.plan.lh = lh;
        spec.plan.validate = validate;
        spec.plan.seed = seed;
        MemberForecasts members;
        {
          py::gil_scoped_release release;
          members = train_ensemble(spec, set, workers);
        }
        py::list each;
        for (const auto& mem : members.members) each.append(mem.ok ? py::object(forecast_dict(mem.forecasts)) : py::none());
        return py::make_tuple(forecast_dict(aggregate_median(members)), each);
      },
      py::arg("set"), py::arg("base"),
      py::arg("losses") = std::vector<LossKind>{LossKind::Smape, LossKind::Mape, LossKind::Mase},
      py::arg("lookbacks") = std::vector<std::size_t>{2, 3, 4, 5, 6, 7}, py::arg("repeats") = 1,
      py::arg("iterations") = 100, py::arg("batch_size") = 1024, py::arg("lh") = 1.5, py::arg("validate") = true,
      py::arg("seed") = 0, py::arg("workers") = 1,
      "Returns (median forecasts, per-member forecasts or None for failed members).");

  m.def(
      "median",
      [](const std::vector<py::dict>& members) {
        std::vector<ForecastMap> maps;
        for (const auto& d : members) maps.push_back(forecast_map(d));
        std::vector<const ForecastMap*> ptrs;
        for (const auto& mm : maps) ptrs.push_back(&mm);
        return forecast_dict(aggregate_median(ptrs));
      },
      py::arg("members"));

  m.def("smape", [](const Array& f, const Array& y) { return smape_metric(to_vector(f), to_vector(y)); });
  m.def("smape_m3", [](const Array& f, const Array& y) { return smape_m3_metric(to_vector(f), to_vector(y)); });
  m.def("mape", [](const Array& f, const Array& y) { return mape_metric(to_vector(f), to_vector(y)); });
  m.def(
      "mase",
      [](const Array& f, const Array& y, const Array& history, std::size_t m) {
        return mase_metric(to_vector(f), to_vector(y), to_vector(history), m);
      },
      py::arg("forecast"), py::arg("actual"), py::arg("history"), py::arg("m") = 1);
  m.def("owa", &owa, py::arg("smape"), py::arg("mase"), py::arg("naive2_smape"), py::arg("naive2_mase"));
  m.def("nd", &nd_metric, py::arg("forecast"), py::arg("actual"));
  m.def(
      "naive2",
      [](const Array& h, std::size_t m, std::size_t horizon) {
        return from_span(naive2_forecast(to_vector(h), m, horizon).span());
      },
      py::arg("history"), py::arg("m"), py::arg("horizon"));
  m.def(
      "snaive",
      [](const Array& h, std::size_t m, std::size_t horizon) {
        return from_span(snaive_forecast(to_vector(h), m, horizon).span());
      },
      py::arg("history"), py::arg("m"), py::arg("horizon"));
  m.def(
      "aggregate_average",
      [](const std::vector<double>& means, const std::vector<std::size_t>& counts,
         const std::vector<std::size_t>& horizons) { return aggregate_average(means, counts, horizons); },
      py::arg("means"), py::arg("counts"), py::arg("horizons"));

  m.def(
      "evaluate",
      [](const SeriesSet& set, const py::dict& forecasts) {
        const auto r = evaluate(set, forecast_map(forecasts));
        auto row = [](const MetricSummary& s) {
          py::dict d;
          d["count"] = s.count;
          d["smape"] = s.smape;
          d["smape_m3"] = s.smape_m3;
          d["mape"] = s.mape;
          d["mase"] = s.mase;
          d["owa"] = s.owa;
          return d;
        };
        py::dict out;
        for (const auto& s : r.subsets) out[py::str(s.name)] = row(s);
        out[py::str(r.overall.name)] = row(r.overall);
        return out;
      },
      py::arg("set"), py::arg("forecasts"), "Summary metrics per frequency and overall (key 'ALL').");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "nbeats");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs a command-line invocation in-process and returns its exit code.");
}
