#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "nbeats/metrics.hpp"
#include "nbeats/train.hpp"

namespace nbeats {

std::size_t TrainPlan::effective_cadence() const {
  return cadence > 0 ? cadence : std::max<std::size_t>(1, iterations / 20);
}

std::size_t TrainPlan::anchor_window(std::size_t horizon) const {
  // tolerance keeps integral products such as 1.1 * 10 from rounding up
  return static_cast<std::size_t>(std::ceil(lh * static_cast<double>(horizon) - 1e-9));
}

void TrainPlan::validate_plan() const {
  if (iterations < 1) throw std::invalid_argument("train plan: iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train plan: batch size must be >= 1");
  if (!(lh > 0.0)) throw std::invalid_argument("train plan: L_H must be positive");
  if (lookback_multiple < 1) throw std::invalid_argument("train plan: lookback multiple must be >= 1");
  if (patience < 1) throw std::invalid_argument("train plan: patience must be >= 1");
}

TrainBatch sample_batch(const SamplingSource& source, std::size_t horizon, const TrainPlan& plan, Rng& rng) {
  plan.validate_plan();
  const std::size_t count = source.series_count();
  if (count == 0) throw std::invalid_argument("sample_batch: empty series set");
  const std::size_t lookback = plan.lookback_multiple * horizon;
  const std::size_t window = std::max<std::size_t>(plan.anchor_window(horizon), 1);

  TrainBatch batch;
  batch.inputs = Matrix(plan.batch_size, lookback);
  batch.input_masks = Matrix(plan.batch_size, lookback);
  batch.targets = Matrix(plan.batch_size, horizon);
  batch.target_masks = Matrix(plan.batch_size, horizon);
  batch.series_ids.resize(plan.batch_size);
  batch.periodicity.resize(plan.batch_size);

  for (std::size_t b = 0; b < plan.batch_size; ++b) {
    const std::size_t id = rng.below(count);
    const std::size_t n = source.length(id);
    if (n == 0) throw std::invalid_argument("sample_batch: series with no visible points");
    // anchor in [max(1, n - window), n - 1]; at least one input point when n >= 2
    const std::size_t lo = n >= 2 ? std::max<std::size_t>(1, n > window ? n - window : 0) : 0;
    const std::size_t anchor = lo + rng.below(n - lo);

    batch.series_ids[b] = id;
    batch.periodicity[b] = source.periodicity(id);
    auto in = batch.inputs.row(b);
    auto in_mask = batch.input_masks.row(b);
    for (std::size_t k = 0; k < lookback; ++k) {
      // position anchor - lookback + k
      if (anchor + k >= lookback) {
        in[k] = source.value(id, anchor + k - lookback);
        in_mask[k] = 1.0;
      }
    }
    auto out = batch.targets.row(b);
    auto out_mask = batch.target_masks.row(b);
    for (std::size_t k = 0; k < horizon && anchor + k < n; ++k) {
      out[k] = source.value(id, anchor + k);
      out_mask[k] = 1.0;
    }
  }
  return batch;
}

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state) {
  auto p = params.spans();
  const auto g = grads.spans();
  auto m = state.first_moment.spans();
  auto v = state.second_moment.spans();
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw ShapeError("adam_step: tensor count mismatch");
  }
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t].size() != g[t].size() || p[t].size() != m[t].size() || p[t].size() != v[t].size()) {
      throw ShapeError("adam_step: shape mismatch in tensor " + std::to_string(t));
    }
  }
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      const double gi = g[t][i];
      m[t][i] = b1 * m[t][i] + (1.0 - b1) * gi;
      v[t][i] = b2 * v[t][i] + (1.0 - b2) * gi * gi;
      const double m_hat = m[t][i] / bias1;
      const double v_hat = v[t][i] / bias2;
      p[t][i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

Matrix last_windows(const SamplingSource& source, std::size_t length) {
  Matrix x(source.series_count(), length);
  for (std::size_t i = 0; i < source.series_count(); ++i) {
    const std::size_t n = source.length(i);
    auto row = x.row(i);
    const std::size_t take = std::min(n, length);
    for (std::size_t k = 0; k < take; ++k) row[length - take + k] = source.value(i, n - take + k);
  }
  return x;
}

std::map<std::string, std::vector<double>> forecast_view(const SplitView& view, const Network& net,
                                                         const ParamStore& params) {
  const Matrix x = last_windows(view, net.config().input_len());
  const Matrix f = net.predict(x, params);
  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < view.series_count(); ++i) {
    const auto row = f.row(i);
    out[view.set().series[view.series_index(i)].id] = std::vector<double>(row.begin(), row.end());
  }
  return out;
}

namespace {

double validation_smape(const SplitView& view, const Matrix& inputs, const Network& net, const ParamStore& params) {
  const Matrix f = net.predict(inputs, params);
  double total = 0.0;
  for (std::size_t i = 0; i < view.series_count(); ++i) total += smape_metric(f.row(i), view.target(i));
  return total / static_cast<double>(view.series_count());
}

}  // namespace

TrainResult train_model(const SeriesSet& set, const ModelConfig& cfg, const TrainPlan& plan) {
  plan.validate_plan();
  cfg.validate();
  const auto tags = set.present_frequencies();
  if (tags.size() != 1) {
    throw std::invalid_argument("train_model: expected a single-frequency series set, got " +
                                std::to_string(tags.size()) + " frequencies");
  }
  const std::size_t horizon = set.frequency(tags.front()).horizon;
  if (horizon != cfg.horizon || plan.lookback_multiple != cfg.lookback_multiple) {
    throw std::invalid_argument("train_model: plan/config/dataset disagree on horizon or lookback");
  }

  TrainResult result;
  const SplitView view(set, plan.validate ? SplitMode::Validation : SplitMode::Full, &result.diag);
  if (view.series_count() == 0) throw std::invalid_argument("train_model: no series long enough to train on");

  Rng rng(plan.seed);
  const Network net(cfg);
  ParamStore params = init_params(cfg, rng);
  ParamStore grads(cfg);
  AdamState adam(cfg);
  const Matrix val_inputs = plan.validate ? last_windows(view, cfg.input_len()) : Matrix();

  ParamStore best = params;
  std::size_t stale = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  const std::size_t cadence = plan.effective_cadence();
  Matrix grad_forecast;

  for (std::size_t it = 1; it <= plan.iterations; ++it) {
    const TrainBatch batch = sample_batch(view, horizon, plan, rng);
    ForwardTrace trace = net.forward(batch.inputs, params);
    const double loss = batch_loss(plan.loss, trace.forecast, batch, grad_forecast, &result.diag);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_model: non-finite loss at iteration " + std::to_string(it));
    }
    grads.set_zero();
    net.backward(trace, grad_forecast, params, grads);
    trace = ForwardTrace();  // release activations before the update
    adam_step(params, grads, adam);
    result.iterations_run = it;
    loss_sum += loss;
    ++loss_count;

    if (it % cadence != 0 && it != plan.iterations) continue;
    TrainLogRow row;
    row.iteration = it;
    row.train_loss = loss_sum / static_cast<double>(loss_count);
    loss_sum = 0.0;
    loss_count = 0;
    if (plan.validate) {
      row.val_smape = validation_smape(view, val_inputs, net, params);
      if (!std::isfinite(row.val_smape)) {
        throw std::runtime_error("train_model: non-finite validation sMAPE at iteration " + std::to_string(it));
      }
      if (row.val_smape < result.best_val_smape) {
        result.best_val_smape = row.val_smape;
        result.best_iteration = it;
        best = params;
        row.best = true;
        stale = 0;
      } else {
        ++stale;
      }
    } else {
      result.best_iteration = it;
      row.best = true;
    }
    result.log.push_back(row);
    if (plan.validate && stale >= plan.patience) break;
  }
  result.params = plan.validate ? std::move(best) : std::move(params);
  return result;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "iteration,train_loss,val_smape,best_flag\n";
  for (const auto& r : log) {
    out << r.iteration << ',' << format_double(r.train_loss) << ','
        << (std::isnan(r.val_smape) ? std::string() : format_double(r.val_smape)) << ',' << (r.best ? 1 : 0)
        << '\n';
  }
}

}  // namespace nbeats
