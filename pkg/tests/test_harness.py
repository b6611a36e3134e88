import csv
import json
import os

import numpy as np
import pytest

from chaosbench import harness
from chaosbench.dynamics import Trajectory
from chaosbench.harness import (
    BenchmarkRecord,
    ExperimentConfig,
    generate_split,
    load_records,
    run_campaign,
    run_experiment,
    titrate_history,
    tune,
    worker_count,
)
from chaosbench.metrics import MetricKind, error_curve
from chaosbench.models import HistoryTooShortError, HyperGrid
from chaosbench.systems import get_system

FAST = ExperimentConfig(metrics=("sMAPE", "MAE"), invariants=False, seeds=(0,))


def read_rows(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r.pop("train_walltime_seconds")
    return rows


def test_config_defaults():
    c = ExperimentConfig()
    assert (c.train_points, c.val_points, c.test_points) == (1000, 200, 5000)
    assert c.metric_for_tuning is MetricKind.sMAPE
    assert len(c.metrics) == 14 and c.seeds == (0, 1, 2, 3, 4)


def test_config_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(train_periods=1, val_periods=2)
    with pytest.raises(ValueError):
        ExperimentConfig(granularity=0)
    c = ExperimentConfig(metrics=("MAE",), seeds=(3,), hyper_grid=HyperGrid(lookback_range=(2, 4)))
    assert c.metrics[0] is MetricKind.sMAPE
    path = tmp_path / "c.json"
    path.write_text(json.dumps(c.to_dict()))
    back = ExperimentConfig.from_json_file(path)
    assert back == c and back.config_hash() == c.config_hash()
    assert ExperimentConfig(seeds=(4,)).config_hash() != c.config_hash()


def test_split_lengths_and_independence():
    spec = get_system("Lorenz")
    train, test = generate_split(spec, ExperimentConfig(), 0)
    assert len(train) == 1200 and len(test) == 6000
    assert train.granularity == 100 and test.granularity == 100
    assert train.dt == pytest.approx(spec.period / 100)
    assert np.linalg.norm(train.values[0] - test.values[0]) > 1e-3
    again, _ = generate_split(spec, ExperimentConfig(), 0)
    assert np.array_equal(again.values, train.values)
    other, _ = generate_split(spec, ExperimentConfig(), 1)
    assert not np.array_equal(other.values, train.values)


def test_split_cache_returns_copies():
    spec = get_system("Chen")
    a, _ = generate_split(spec, FAST, 0)
    a.values[:] = 0
    b, _ = generate_split(spec, FAST, 0)
    assert np.any(b.values != 0)


def _ar3(n=1400):
    x = np.zeros(n)
    x[:3] = [1.0, 0.3, -0.5]
    for t in range(3, n):
        x[t] = 0.5 * x[t - 1] - 0.4 * x[t - 2] + 0.3 * x[t - 3] + 0.6 * np.sin(0.05 * t)
    return x[:, None]


def test_tune_single_value_grid():
    cfg = ExperimentConfig(hyper_grid=HyperGrid(lookback_range=(7,)))
    res = tune("LinearRidge", None, _ar3(), cfg)
    assert res.value == 7 and list(res.scores) == [7]


def test_tune_ties_go_to_smallest():
    rng = np.random.default_rng(0)
    res = tune("NaiveMean", None, rng.standard_normal((1200, 2)))
    assert res.value == 2
    assert len(set(res.scores.values())) == 1


def test_tune_linear_ridge_needs_three_lags():
    res = tune("LinearRidge", None, _ar3())
    assert res.value >= 3


def test_tune_rejects_short_history():
    short = ExperimentConfig(hyper_grid=HyperGrid(lookback_range=(50,)))
    with pytest.raises(HistoryTooShortError):
        tune("LinearRidge", None, np.ones((120, 1)), short, train_points=60)


def test_tune_all_divergent_marks_failure(monkeypatch):
    monkeypatch.setattr(harness, "_forecast_score", lambda *a: float("inf"))
    res = tune("LinearRidge", None, _ar3(), ExperimentConfig(hyper_grid=HyperGrid(lookback_range=(5, 10))))
    assert res.failed and res.value == 5


@pytest.fixture(scope="module")
def lorenz_mean_record():
    return run_experiment("Lorenz", "NaiveMean", ExperimentConfig(invariants=False), 0)


def test_record_has_all_metric_curves(lorenz_mean_record):
    rec = lorenz_mean_record
    assert set(rec.error_curves) == {k.value for k in MetricKind}
    grids = [c.lengths for c in rec.error_curves.values()]
    assert all(np.array_equal(g, grids[0]) for g in grids)
    assert rec.train_walltime_seconds > 0
    assert rec.horizon == 5000 and rec.valid_length == 5000
    assert not rec.divergence_flag


def test_record_roundtrip(lorenz_mean_record):
    d = json.loads(json.dumps(lorenz_mean_record.to_dict()))
    back = BenchmarkRecord.from_dict(d)
    assert back.score() == lorenz_mean_record.score()
    assert back.result_row() == lorenz_mean_record.result_row()


def test_rerun_identical_except_walltime():
    a = run_experiment("Chen", "LinearRidge", FAST, 0).to_dict()
    b = run_experiment("Chen", "LinearRidge", FAST, 0).to_dict()
    a.pop("train_walltime_seconds")
    b.pop("train_walltime_seconds")
    assert a == b


def test_no_leakage_sentinel(monkeypatch):
    captured = []
    real_make = harness.make_model

    def spy(*args, **kwargs):
        model = real_make(*args, **kwargs)
        real_predict = model.predict

        def predict(warmup, horizon):
            out = real_predict(warmup, horizon)
            captured.append(out.values.copy())
            return out

        model.predict = predict
        return model

    monkeypatch.setattr(harness, "make_model", spy)
    real_split = harness.generate_split
    spec = get_system("Lorenz")
    for kind in ("LinearRidge", "NVAR", "ESN"):
        captured.clear()
        run_experiment(spec, kind, FAST, 0)
        clean = captured[-1]

        def poisoned(spec, config=None, seed=0):
            train, test = real_split(spec, config, seed)
            v = test.values.copy()
            v[FAST.train_points :] = 1e9
            return train, Trajectory(v, test.dt, test.t0, test.system_name, test.granularity, test.seed)

        monkeypatch.setattr(harness, "generate_split", poisoned)
        captured.clear()
        rec = run_experiment(spec, kind, FAST, 0)
        monkeypatch.setattr(harness, "generate_split", real_split)
        assert np.array_equal(captured[-1], clean)
        # the poisoned truth is still what the forecast is scored against
        assert rec.score() > 100


def test_diverged_horizon_scores_worst():
    y = np.sin(np.arange(400) * 0.05)[:, None] + 2
    curve = error_curve("sMAPE", y, y, lyapunov_max=1.0, dt=0.01, valid_length=50)
    rec = BenchmarkRecord("X", "NVAR", 0, error_curves={"sMAPE": curve}, divergence_flag=True, valid_length=50)
    assert rec.score(lt=0.3) == 0.0
    assert rec.score(lt=1.0) == 200.0


def test_nvar_beats_naive_mean_on_lorenz():
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False)
    nvar = [run_experiment("Lorenz", "NVAR", cfg, s).score() for s in range(5)]
    mean = [run_experiment("Lorenz", "NaiveMean", cfg, s).score() for s in range(5)]
    assert np.median(mean) > np.median(nvar)


def test_campaign_resume_and_determinism(tmp_path):
    systems, kinds = ["Lorenz", "Chen"], ["NaiveMean", "LinearRidge"]
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False, seeds=(0, 1))
    fresh = tmp_path / "fresh"
    recs = run_campaign(cfg, systems, kinds, fresh)
    assert len(recs) == 8
    assert [(r.system, r.model, r.seed) for r in recs] == sorted((r.system, r.model, r.seed) for r in recs)
    partial = tmp_path / "partial"
    run_campaign(cfg, systems, kinds, partial, limit=3)
    assert len(list((partial / "records").glob("*.json"))) == 3
    assert len(read_rows(partial / "results.csv")) == 3
    run_campaign(cfg, systems, kinds, partial)
    assert read_rows(partial / "results.csv") == read_rows(fresh / "results.csv")
    again = tmp_path / "again"
    run_campaign(cfg, systems, kinds, again)
    assert read_rows(again / "results.csv") == read_rows(fresh / "results.csv")
    assert (again / "records.csv").read_bytes() == (fresh / "records.csv").read_bytes()
    manifest = json.loads((fresh / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.config_hash() and manifest["n_records"] == 8
    assert len(load_records(fresh)) == 8


def test_resume_skips_finished(tmp_path, monkeypatch):
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False, seeds=(0,))
    run_campaign(cfg, ["Chen"], ["NaiveMean"], tmp_path)
    monkeypatch.setattr(harness, "_run_triple", lambda args: pytest.fail("recomputed a finished triple"))
    assert len(run_campaign(cfg, ["Chen"], ["NaiveMean"], tmp_path)) == 1


def test_campaign_records_failures(tmp_path):
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False, seeds=(0,),
                           hyper_grid=HyperGrid(lookback_range=(1000,)))
    recs = run_campaign(cfg, ["Chen"], ["LinearRidge", "NaiveMean"], tmp_path)
    assert len(recs) == 2
    assert recs[0].error is not None and "HistoryTooShort" in recs[0].error
    assert recs[1].error is None


def test_campaign_rejects_empty():
    with pytest.raises(ValueError):
        run_campaign(FAST, [], ["NaiveMean"])


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("CHAOSBENCH_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CHAOSBENCH_WORKERS", "many")
    with pytest.raises(ValueError):
        worker_count()


@pytest.mark.skipif((os.cpu_count() or 1) < 2, reason="timing isolation needs at least two cores")
def test_parallel_walltime_isolation(tmp_path):
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False, seeds=(0, 1))
    kinds = ["LinearRidge", "DLinear"]
    serial = run_campaign(cfg, ["Lorenz", "Chen"], kinds, tmp_path / "a", workers=1)
    par = run_campaign(cfg, ["Lorenz", "Chen"], kinds, tmp_path / "b", workers=min(os.cpu_count(), 8))
    ratios = [p.train_walltime_seconds / s.train_walltime_seconds for s, p in zip(serial, par)]
    assert 0.8 <= np.median(ratios) <= 1.2


def test_titration():
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False, seeds=(0, 1, 2))
    pts = titrate_history("Lorenz", "NVAR", cfg, (100, 250, 500, 1000))
    assert [p.history_points for p in pts] == [100, 250, 500, 1000]
    assert pts[0].skipped is not None  # 100 points cannot hold two 51-sample windows of taps
    medians = [p.median for p in pts if p.skipped is None]
    inversions = sum(b > a for a, b in zip(medians, medians[1:]))
    assert inversions <= 1
    full = [run_experiment("Lorenz", "NVAR", cfg, s).score() for s in cfg.seeds]
    assert pts[-1].scores == full


def test_titration_requires_increasing():
    with pytest.raises(ValueError):
        titrate_history("Lorenz", "NaiveMean", FAST, (500, 250))
