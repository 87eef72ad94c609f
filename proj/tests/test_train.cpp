#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "nbeats/train.hpp"

using namespace nbeats;

namespace {

/// value(i, t) = 1000 * i + t + 1, with a record of every read.
class RecordingSource : public SamplingSource {
 public:
  explicit RecordingSource(std::vector<std::size_t> lengths, std::size_t m = 1) : lengths_(std::move(lengths)), m_(m) {}
  std::size_t series_count() const override { return lengths_.size(); }
  std::size_t length(std::size_t i) const override { return lengths_.at(i); }
  double value(std::size_t i, std::size_t t) const override {
    REQUIRE(t < lengths_.at(i));
    max_read = std::max(max_read, t);
    ++reads;
    return 1000.0 * static_cast<double>(i) + static_cast<double>(t) + 1.0;
  }
  std::size_t periodicity(std::size_t) const override { return m_; }
  mutable std::size_t max_read = 0;
  mutable std::size_t reads = 0;

 private:
  std::vector<std::size_t> lengths_;
  std::size_t m_;
};

/// Counts any read that would fall past the visible range of a split.
class GuardedView : public SamplingSource {
 public:
  explicit GuardedView(const SplitView& v) : view_(v) {}
  std::size_t series_count() const override { return view_.series_count(); }
  std::size_t length(std::size_t i) const override { return view_.length(i); }
  double value(std::size_t i, std::size_t t) const override {
    if (t >= view_.length(i)) ++violations;
    return view_.value(i, t);
  }
  std::size_t periodicity(std::size_t i) const override { return view_.periodicity(i); }
  mutable std::size_t violations = 0;

 private:
  const SplitView& view_;
};

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

SeriesSet tiny_set(std::size_t count = 40, std::uint64_t seed = 1) {
  SynthOptions o;
  o.count = count;
  o.length = 48;
  o.horizon = 4;
  o.period = 4;
  o.noise_level = 0.05;
  Rng rng(seed);
  return synth_generate(o, rng);
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("smape loss values") {
    const std::vector<double> y{100}, f{50}, m{1};
    CHECK(smape_loss(f, y, m).loss == doctest::Approx(200.0 * 50.0 / 150.0));
    const std::vector<double> y2{3, 4}, m2{1, 1};
    CHECK(smape_loss(y2, y2, m2).loss == 0.0);
    const std::vector<double> zero{0, 0};
    CHECK(smape_loss(zero, zero, m2).loss == 0.0);
    const std::vector<double> nomask{0, 0};
    CHECK_THROWS_AS(smape_loss(y2, y2, nomask), std::invalid_argument);
    CHECK_THROWS_AS(smape_loss(y, y2, m2), ShapeError);
  }

  TEST_CASE("smape gradient follows the frozen-denominator surrogate, not the full loss") {
    const std::vector<double> y{100}, m{1};
    std::vector<double> f{50};
    const auto r = smape_loss(f, y, m);
    const double h = 1e-6;
    const double denom = std::abs(y[0]) + std::abs(f[0]);
    auto surrogate = [&](double v) { return 200.0 * std::abs(y[0] - v) / denom; };
    auto full = [&](double v) {
      const std::vector<double> fv{v};
      return smape_loss(fv, y, m).loss;
    };
    const double fd_surrogate = (surrogate(f[0] + h) - surrogate(f[0] - h)) / (2 * h);
    const double fd_full = (full(f[0] + h) - full(f[0] - h)) / (2 * h);
    CHECK(relative_error(r.grad[0], fd_surrogate, 1e-12) <= 1e-6);
    CHECK(relative_error(r.grad[0], fd_full, 1e-12) > 1e-3);
  }

  TEST_CASE("smape gradient matches the surrogate on random instances") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.below(8);
      std::vector<double> y(n), f(n), m(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.uniform(0.5, 10);
        do f[i] = rng.uniform(-10, 10);
        while (std::abs(f[i] - y[i]) < 1e-2);
        m[i] = rng.uniform() < 0.8 ? 1.0 : 0.0;
      }
      m[0] = 1.0;
      const auto r = smape_loss(f, y, m);
      double weight = 0;
      for (double v : m) weight += v;
      for (std::size_t i = 0; i < n; ++i) {
        const double denom = std::abs(y[i]) + std::abs(f[i]);
        auto surrogate = [&](double v) {
          double s = 0;
          for (std::size_t k = 0; k < n; ++k) {
            const double fk = k == i ? v : f[k];
            const double dk = std::abs(y[k]) + std::abs(f[k]);
            s += m[k] * std::abs(y[k] - fk) / dk;
          }
          return 200.0 / weight * s;
        };
        (void)denom;
        const double h = 1e-6;
        const double fd = (surrogate(f[i] + h) - surrogate(f[i] - h)) / (2 * h);
        CHECK(relative_error(r.grad[i], fd, 1e-9) <= 1e-6);
      }
    }
  }

  TEST_CASE("mape loss values") {
    const std::vector<double> y{200}, f{150}, m{1};
    CHECK(mape_loss(f, y, m).loss == doctest::Approx(25.0));
    CHECK(mape_loss(y, y, m).loss == 0.0);
    const std::vector<double> y2{0, 200}, f2{5, 150}, m2{1, 1};
    CHECK(mape_loss(f2, y2, m2).loss == doctest::Approx(25.0));
    CHECK(mape_loss(f2, y2, m2).grad[0] == 0.0);
    const std::vector<double> yz{0}, fz{1};
    CHECK_THROWS(mape_loss(fz, yz, m));
  }

  TEST_CASE("mase loss values") {
    const std::vector<double> hist{1, 2, 3}, y{4}, f{5}, m{1};
    CHECK(mase_loss(y, y, m, hist, 1).loss == 0.0);
    CHECK(mase_loss(f, y, m, hist, 1).loss == doctest::Approx(1.0));
    const std::vector<double> flat{2, 2, 2};
    CHECK(mase_loss(f, y, m, flat, 1).loss == 0.0);
    Diagnostics d;
    const std::vector<double> shorty{1};
    CHECK(mase_loss(f, y, m, shorty, 1, &d).loss == 0.0);
    CHECK(d.short_history == 1);
  }

  TEST_CASE("losses ignore masked positions and are scale invariant") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> y(5), f(5), m{1, 0, 1, 1, 0};
      for (std::size_t i = 0; i < 5; ++i) {
        y[i] = rng.uniform(1, 5);
        f[i] = rng.uniform(1, 5);
      }
      auto f2 = f;
      f2[1] += 100;
      f2[4] -= 3;
      const std::vector<double> hist{1, 3, 2, 5};
      CHECK(smape_loss(f, y, m).loss == smape_loss(f2, y, m).loss);
      CHECK(mape_loss(f, y, m).loss == mape_loss(f2, y, m).loss);
      CHECK(mase_loss(f, y, m, hist, 1).loss == mase_loss(f2, y, m, hist, 1).loss);
      const double c = rng.uniform(0.1, 10);
      std::vector<double> yc = y, fc = f;
      for (auto& v : yc) v *= c;
      for (auto& v : fc) v *= c;
      CHECK(smape_loss(fc, yc, m).loss == doctest::Approx(smape_loss(f, y, m).loss).epsilon(1e-12));
      CHECK(mape_loss(fc, yc, m).loss == doctest::Approx(mape_loss(f, y, m).loss).epsilon(1e-12));
      CHECK(smape_loss(f, y, m).loss >= 0);
    }
  }

  TEST_CASE("sampler anchors fall in the last ceil(L_H * H) points") {
    RecordingSource src({50});
    TrainPlan plan;
    plan.batch_size = 2000;
    plan.lh = 1.5;
    plan.lookback_multiple = 2;
    Rng rng(3);
    const auto batch = sample_batch(src, 6, plan, rng);
    std::set<double> anchors;
    for (std::size_t b = 0; b < batch.size(); ++b) anchors.insert(batch.targets(b, 0));
    // target[0] = anchor + 1
    CHECK(anchors.size() == 9);
    CHECK(*anchors.begin() == 42.0);
    CHECK(*anchors.rbegin() == 50.0);
    CHECK(src.max_read == 49);
    CHECK(plan.anchor_window(6) == 9);
    plan.lh = 1.1;
    CHECK(plan.anchor_window(10) == 11);
    plan.lh = 1.25;
    CHECK(plan.anchor_window(6) == 8);
  }

  TEST_CASE("sampler masks positions outside the series") {
    RecordingSource src({5});
    TrainPlan plan;
    plan.batch_size = 50;
    plan.lh = 10;
    plan.lookback_multiple = 3;
    Rng rng(8);
    const auto batch = sample_batch(src, 4, plan, rng);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double anchor = batch.targets(b, 0) - 1;
      CHECK(anchor >= 1);
      for (std::size_t k = 0; k < 12; ++k) {
        const double pos = anchor - 12 + static_cast<double>(k);
        if (pos < 0) {
          CHECK(batch.input_masks(b, k) == 0.0);
          CHECK(batch.inputs(b, k) == 0.0);
        } else {
          CHECK(batch.input_masks(b, k) == 1.0);
          CHECK(batch.inputs(b, k) == pos + 1);
        }
      }
      for (std::size_t k = 0; k < 4; ++k) {
        const bool inside = anchor + static_cast<double>(k) < 5;
        CHECK(batch.target_masks(b, k) == (inside ? 1.0 : 0.0));
        if (!inside) CHECK(batch.targets(b, k) == 0.0);
      }
    }
  }

  TEST_CASE("sampler is deterministic and rejects an empty source") {
    RecordingSource src({30, 40, 12});
    TrainPlan plan;
    plan.batch_size = 64;
    Rng a(5), b(5);
    const auto x = sample_batch(src, 3, plan, a);
    const auto y = sample_batch(src, 3, plan, b);
    CHECK(x.inputs == y.inputs);
    CHECK(x.targets == y.targets);
    CHECK(x.series_ids == y.series_ids);
    RecordingSource empty({});
    CHECK_THROWS(sample_batch(empty, 3, plan, a));
  }

  TEST_CASE("sampler never reads validation values") {
    const SeriesSet set = tiny_set(20);
    const SplitView view(set, SplitMode::Validation);
    GuardedView guard(view);
    TrainPlan plan;
    plan.batch_size = 500;
    plan.lh = 20;
    Rng rng(2);
    for (int i = 0; i < 5; ++i) sample_batch(guard, 4, plan, rng);
    CHECK(guard.violations == 0);
  }

  TEST_CASE("adam step behaviour") {
    ModelConfig cfg = generic_preset(2, 2, 1, 3, 1, 1);
    Rng rng(1);
    ParamStore p = init_params(cfg, rng);
    const ParamStore before = p;
    ParamStore g(cfg);
    AdamState s(cfg);
    adam_step(p, g, s);
    CHECK(p == before);

    ParamStore p2 = before;
    AdamState s2(cfg);
    for (auto span : g.spans()) std::fill(span.begin(), span.end(), 1.0);
    adam_step(p2, g, s2);
    const auto a = before.flatten(), b = p2.flatten();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] - a[i] == doctest::Approx(-1e-3).epsilon(1e-6));

    ParamStore p3 = before;
    AdamState s3(cfg);
    adam_step(p3, g, s3);
    CHECK(p3 == p2);

    ParamStore wrong(generic_preset(2, 2, 2, 3, 1, 1));
    CHECK_THROWS_AS(adam_step(p3, wrong, s3), ShapeError);
  }

  TEST_CASE("a full train step passes a finite-difference check") {
    for (LossKind kind : {LossKind::Smape, LossKind::Mape, LossKind::Mase}) {
      const SeriesSet set = tiny_set(10, 3);
      const SplitView view(set, SplitMode::Full);
      ModelConfig cfg = generic_preset(4, 2, 3, 12, 1, 4);
      TrainPlan plan;
      plan.batch_size = 4;
      plan.lh = 3;
      Rng rng(11);
      ParamStore p = init_params(cfg, rng);
      const auto batch = sample_batch(view, 4, plan, rng);
      const Network net(cfg);
      Matrix grad;
      const auto trace = net.forward(batch.inputs, p);
      batch_loss(kind, trace.forecast, batch, grad);
      ParamStore grads(cfg);
      net.backward(trace, grad, p, grads);
      // frozen sMAPE denominators for the surrogate
      Matrix denom(batch.size(), 4);
      for (std::size_t i = 0; i < denom.size(); ++i) {
        denom.span()[i] = std::abs(batch.targets.span()[i]) + std::abs(trace.forecast.span()[i]);
      }
      auto loss = [&] {
        const Matrix f = net.forward(batch.inputs, p).forecast;
        if (kind != LossKind::Smape) {
          Matrix unused;
          return batch_loss(kind, f, batch, unused);
        }
        double total = 0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          double s = 0, w = 0;
          for (std::size_t i = 0; i < 4; ++i) {
            w += batch.target_masks(b, i);
            s += batch.target_masks(b, i) * std::abs(batch.targets(b, i) - f(b, i)) / denom(b, i);
          }
          total += 200.0 / w * s;
        }
        return total / static_cast<double>(batch.size());
      };
      auto signs = [&] {
        const auto t = net.forward(batch.inputs, p);
        auto pat = activation_pattern(t);
        for (std::size_t i = 0; i < t.forecast.size(); ++i) pat.push_back(t.forecast.span()[i] > batch.targets.span()[i]);
        return pat;
      };
      const auto base = signs();
      auto spans = p.spans();
      const auto gspans = std::as_const(grads).spans();
      double worst = 0;
      std::string where;
      for (std::size_t k = 0; k < spans.size(); ++k) {
        GradCheckOptions opts;
        opts.tolerance = 1e-4;
        opts.abs_floor = 1e-6 * std::max(1.0, std::abs(loss()));
        const auto r = grad_check(spans[k], gspans[k], loss, opts, [&] { return signs() == base; });
        if (r.max_rel_err > worst && r.failure) where = "tensor " + std::to_string(k) + " " + *r.failure;
        worst = std::max(worst, r.max_rel_err);
      }
      INFO("loss " << to_string(kind) << " " << where);
      CHECK(worst <= 1e-4);
    }
  }

  TEST_CASE("training is deterministic and reduces the loss") {
    const SeriesSet set = tiny_set(30);
    ModelConfig cfg = generic_preset(4, 2, 2, 16, 1, 2);
    TrainPlan plan;
    plan.iterations = 60;
    plan.batch_size = 32;
    plan.lh = 5;
    plan.seed = 9;
    plan.patience = 100;
    const auto a = train_model(set, cfg, plan);
    const auto b = train_model(set, cfg, plan);
    CHECK(a.params == b.params);
    REQUIRE(a.log.size() >= 2);
    CHECK(a.log.front().iteration == plan.effective_cadence());
    const auto best = std::find_if(a.log.begin(), a.log.end(), [&](const auto& r) { return r.iteration == a.best_iteration; });
    REQUIRE(best != a.log.end());
    CHECK(best->train_loss < a.log.front().train_loss);
    CHECK(std::isfinite(a.best_val_smape));

    plan.validate = false;
    const auto c = train_model(set, cfg, plan);
    CHECK(c.iterations_run == plan.iterations);
    CHECK(std::isnan(c.log.front().val_smape));
  }

  TEST_CASE("early stopping halts after the patience runs out") {
    const SeriesSet set = tiny_set(20);
    ModelConfig cfg = generic_preset(4, 2, 1, 8, 1, 1);
    TrainPlan plan;
    plan.iterations = 400;
    plan.batch_size = 8;
    plan.cadence = 1;
    plan.patience = 2;
    plan.seed = 1;
    const auto r = train_model(set, cfg, plan);
    std::size_t stale = 0;
    for (const auto& row : r.log) stale = row.best ? 0 : stale + 1;
    CHECK((r.iterations_run == plan.iterations || stale == plan.patience));
    CHECK(r.best_iteration <= r.iterations_run);
  }

  TEST_CASE("train_model rejects inconsistent plans") {
    const SeriesSet set = tiny_set(5);
    TrainPlan plan;
    plan.iterations = 1;
    CHECK_THROWS(train_model(set, generic_preset(5, 2, 1, 4, 1, 1), plan));
    plan.lookback_multiple = 3;
    CHECK_THROWS(train_model(set, generic_preset(4, 2, 1, 4, 1, 1), plan));
    plan.lookback_multiple = 2;
    plan.iterations = 0;
    CHECK_THROWS(train_model(set, generic_preset(4, 2, 1, 4, 1, 1), plan));
  }

  TEST_CASE("training log csv layout") {
    const auto path = std::filesystem::temp_directory_path() / "nbeats_log.csv";
    std::vector<TrainLogRow> log{{5, 1.5, 20.25, true}, {10, 1.25, std::nan(""), false}};
    write_train_log(log, path);
    std::ifstream in(path);
    std::string l1, l2, l3;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    CHECK(l1 == "iteration,train_loss,val_smape,best_flag");
    CHECK(l2 == "5,1.5,20.25,1");
    CHECK(l3 == "10,1.25,,0");
    std::filesystem::remove(path);
  }
}
