import math

import numpy as np
import pytest

import nbeats


def test_metrics_match_hand_values():
    assert nbeats.smape(np.array([50.0]), np.array([100.0])) == pytest.approx(200.0 / 3.0)
    assert nbeats.mase(np.array([4.0]), np.array([4.0]), np.array([1.0, 2.0, 3.0])) == 0.0
    assert nbeats.mase(np.array([5.0]), np.array([2.0]), np.array([2.0, 2.0])) is None
    assert nbeats.owa(5.0, 3.0, 10.0, 2.0) == 1.0
    assert list(nbeats.snaive(np.array([1.0, 2.0, 3.0, 4.0]), 2, 4)) == [3.0, 4.0, 3.0, 4.0]
    w = nbeats.aggregate_average([1.0, 2.0, 3.0, 4.0], [645, 756, 1428, 174], [6, 8, 18, 8])
    assert w == pytest.approx((3870 + 2 * 6048 + 3 * 25704 + 4 * 1392) / 37014)


def test_bases_and_presets():
    back, fwd = nbeats.trend_basis(12, 6, 2)
    assert back.shape == (12, 3) and fwd.shape == (6, 3)
    _, sf = nbeats.fourier_basis(12, 6)
    assert sf.shape[0] == 6
    cfg = nbeats.interpretable_preset(6, 2, trend_width=8, season_width=8)
    assert cfg.stack_count == 2 and cfg.input_len == 12
    assert nbeats.ModelConfig.from_text(cfg.to_text()) == cfg


def test_model_decomposition_and_persistence(tmp_path):
    cfg = nbeats.generic_preset(4, 2, stacks=2, width=8, layers=2)
    model = nbeats.Model(cfg, seed=3)
    x = np.random.default_rng(0).uniform(1, 2, size=(5, cfg.input_len))
    forecast, stacks = model.decompose(x)
    assert forecast.shape == (5, 4)
    np.testing.assert_allclose(forecast, stacks[0] + stacks[1], atol=1e-12)
    np.testing.assert_array_equal(model.forecast(x), forecast)
    path = tmp_path / "m.nbw"
    model.save(path)
    again = nbeats.Model.load(path)
    np.testing.assert_array_equal(again.parameters(), model.parameters())


def test_training_and_ensemble():
    data = nbeats.synthetic(count=20, length=40, horizon=4, period=4, noise=0.05, seed=1)
    cfg = nbeats.generic_preset(4, 2, stacks=2, width=8, layers=2)
    model, log = nbeats.train(data, cfg, iterations=20, batch_size=16, validate=False, seed=2)
    assert len(log) > 0 and all(math.isfinite(row[1]) for row in log)
    forecasts = nbeats.predict(model, data)
    assert set(forecasts) == set(data.ids)
    report = nbeats.evaluate(data, forecasts)
    assert report["ALL"]["count"] == 20

    median, members = nbeats.train_ensemble(
        data, cfg, lookbacks=[2, 3], iterations=10, batch_size=16, validate=False, workers=2)
    assert len(members) == 6
    again = nbeats.median(members)
    assert set(again) == set(median)
    for key, value in median.items():
        np.testing.assert_array_equal(again[key], value)


def test_dataset_round_trip_and_cli(tmp_path):
    data = nbeats.synthetic(count=5, length=30, horizon=4, period=4, seed=4)
    data.save(tmp_path / "train.csv", tmp_path / "test.csv", tmp_path / "meta.csv")
    back = nbeats.load_dataset(tmp_path / "train.csv", tmp_path / "test.csv", tmp_path / "meta.csv")
    assert back.ids == data.ids
    np.testing.assert_array_equal(back.test(data.ids[0]), data.test(data.ids[0]))
    (tmp_path / "run.cfg").write_text("train = train.csv\ntest = test.csv\nmeta = meta.csv\n")
    code = nbeats.run_cli(["evaluate", "--config", str(tmp_path / "run.cfg"), "naive2", "--metric", "owa",
                           "--out", str(tmp_path / "eval")])
    assert code == 0
    assert (tmp_path / "eval" / "report.csv").exists()
    assert nbeats.run_cli(["evaluate", "--config", str(tmp_path / "missing.cfg"), "naive"]) == 1


def test_errors_surface_as_python_exceptions():
    with pytest.raises(ValueError):
        nbeats.smape(np.array([1.0]), np.array([1.0, 2.0]))
    with pytest.raises(Exception):
        nbeats.median([])
