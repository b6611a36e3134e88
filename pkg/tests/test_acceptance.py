"""Acceptance criteria 1 to 10, each reporting one PASS/FAIL line."""

import csv
import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosbench import harness
from chaosbench.analysis import RankPanel, correlate_with_lyapunov, mutual_correlation, rank_correlation_matrix
from chaosbench.dynamics import Trajectory, integrate_states, sample_attractor
from chaosbench.harness import ExperimentConfig, generate_split, run_campaign, run_experiment
from chaosbench.invariants import (
    correlation_dimension,
    ensemble_lyapunov_estimate,
    kaplan_yorke,
)
from chaosbench.lyapunov import two_route_lyapunov
from chaosbench.metrics import MetricUndefinedError, evaluate
from chaosbench.models import NAIVE_KINDS, make_model
from chaosbench.systems import get_system, registry

import oracles

LORENZ_ORACLE = 0.902
SQUARE_ORACLE = 1.9596


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail=""):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def test_criterion_01_two_route_lyapunov(report):
    start = time.perf_counter()
    bad = []
    for spec in registry():
        res = two_route_lyapunov(spec)
        if not res.agree:
            bad.append(f"{spec.name} qr={res.qr_matched:.4g} naive={res.naive:.4g}")
    elapsed = time.perf_counter() - start
    report(1, not bad and elapsed < 600, f"17 systems in {elapsed:.0f} s; disagreeing: {bad or 'none'}")


def test_criterion_02_lorenz_trace(report):
    est = ensemble_lyapunov_estimate(get_system("Lorenz"), "long", n_traj=4, n_steps=20000, seed=0)
    total = float(est.spectrum.sum())
    trace_err = abs(total + 13.6667) / 13.6667
    oracle = oracles.benettin_lambda_max(oracles.lorenz, [1.0, 1.0, 20.0], t_total=100.0)
    lam_err = abs(est.lyapunov_max - LORENZ_ORACLE) / LORENZ_ORACLE
    ok = trace_err < 0.01 and est.lyapunov_max > 0 and lam_err < 0.05 and abs(oracle - LORENZ_ORACLE) < 0.1
    report(2, ok, f"sum={total:.4f} (err {trace_err:.2%}), lambda_max={est.lyapunov_max:.4f} "
                  f"vs oracle {LORENZ_ORACLE} (err {lam_err:.2%})")


def test_criterion_03_kaplan_yorke(report):
    d = kaplan_yorke([0.9, 0.0, -14.57])
    neg = kaplan_yorke([-0.1, -1.0, -3.0])
    report(3, abs(d - 2.0618) < 1e-3 and neg == 0.0, f"D_KY={d:.6f}, all-negative={neg}")


def test_criterion_04_correlation_dimension(report):
    t = np.linspace(0, 2 * np.pi, 4000, endpoint=False)
    circle = np.column_stack([np.cos(t), np.sin(t)])[np.random.default_rng(0).permutation(4000)]
    square = np.random.default_rng(1).uniform(size=(5000, 2))
    spec = get_system("Lorenz")
    lor = integrate_states(spec, sample_attractor(spec, 0), 0.01, 60000)[::6]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dc = correlation_dimension(circle, theiler=0)
        ds = correlation_dimension(square, theiler=0)
        full, half = correlation_dimension(lor, n_radii=24), correlation_dimension(lor, n_radii=12)
    ok = abs(dc - 1) < 0.1 and abs(ds - 2) < 0.15 and abs(ds - SQUARE_ORACLE) < 0.15 and abs(full - half) < 0.05
    report(4, ok, f"circle={dc:.3f}, square={ds:.3f} (oracle {SQUARE_ORACLE}), "
                  f"Lorenz {full:.3f} vs halved grid {half:.3f}")


RANK_TRIALS = {"n": 0, "bad": 0}


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=5, max_size=30),
       st.integers(0, 2**31), st.sampled_from(["exp", "cube", "arctan", "affine"]))
def _rank_trial(y, seed, transform):
    y = np.asarray(y)
    f = y + np.random.default_rng(seed).standard_normal(y.size) * 10
    g = {"exp": lambda v: np.exp(v / 25), "cube": lambda v: v**3, "affine": lambda v: 3 * v + 2,
         "arctan": np.arctan}[transform]
    RANK_TRIALS["n"] += 1
    for kind in ("SpearmanCorr", "KendallTau"):
        try:
            base = evaluate(kind, y, f)
        except MetricUndefinedError:
            return
        if abs(evaluate(kind, y, g(f)) - base) > 1e-12:
            RANK_TRIALS["bad"] += 1
            return


def test_criterion_05_metric_suite(report):
    hand = [evaluate("sMAPE", [1, 1], [3, 1]) - 50.0, evaluate("WAPE", [1, 2, 3], [1, 2, 6]) - 0.5,
            evaluate("MASE", [1, 2, 3], [2, 3, 4]) - 1.0]
    rng = np.random.default_rng(0)
    smapes = [evaluate("sMAPE", rng.normal(0, s, 20), rng.normal(0, s, 20)) for s in rng.uniform(0.01, 100, 500)]
    smapes += [evaluate("sMAPE", [1.0, 2.0], [-1.0, -2.0]), evaluate("sMAPE", [1.0, 2.0], [1.0, 2.0])]
    RANK_TRIALS.update(n=0, bad=0)
    _rank_trial()
    ok = (max(abs(h) for h in hand) < 1e-12 and 0 <= min(smapes) and max(smapes) <= 200
          and RANK_TRIALS["n"] >= 1000 and RANK_TRIALS["bad"] == 0)
    report(5, ok, f"hand residual {max(abs(h) for h in hand):.1e}, sMAPE range [{min(smapes):.1f}, "
                  f"{max(smapes):.1f}], rank trials {RANK_TRIALS['n']} with {RANK_TRIALS['bad']} violations")


def test_criterion_06_protocol(report, monkeypatch):
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False, seeds=(0,))
    train, test = generate_split(get_system("Lorenz"), ExperimentConfig(), 0)
    # the test trajectory carries the warmup window ahead of the scored horizon
    lengths = (cfg.train_points, cfg.val_points, len(train), len(test) - cfg.train_points)
    captured = []
    real_make, real_split = harness.make_model, harness.generate_split

    def spy(*args, **kwargs):
        model = real_make(*args, **kwargs)
        inner = model.predict

        def predict(warmup, horizon):
            out = inner(warmup, horizon)
            captured.append(out.values.copy())
            return out

        model.predict = predict
        return model

    def poisoned(spec, config=None, seed=0):
        tr, te = real_split(spec, config, seed)
        v = te.values.copy()
        v[cfg.train_points:] = 1e9
        return tr, Trajectory(v, te.dt, te.t0, te.system_name, te.granularity, te.seed)

    monkeypatch.setattr(harness, "make_model", spy)
    leaks = []
    for kind in ("LinearRidge", "NVAR", "ESN", "NaiveSeasonal"):
        captured.clear()
        run_experiment("Lorenz", kind, cfg, 0)
        clean = captured[-1]
        monkeypatch.setattr(harness, "generate_split", poisoned)
        captured.clear()
        run_experiment("Lorenz", kind, cfg, 0)
        monkeypatch.setattr(harness, "generate_split", real_split)
        if not np.array_equal(captured[-1], clean):
            leaks.append(kind)
    ok = lengths == (1000, 200, 1200, 5000) and not leaks
    report(6, ok, f"train/val/split/test = {lengths}; leaking models: {leaks or 'none'}")


def test_criterion_07_model_ordering(report, tmp_path):
    kinds = ["ESN", "NVAR"] + [k.value for k in NAIVE_KINDS]
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False)
    start = time.process_time()
    t0 = time.perf_counter()
    run_campaign(cfg, [s.name for s in registry()], kinds, tmp_path)
    core_hours = max(time.process_time() - start, time.perf_counter() - t0) / 3600
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    scores = {}
    for r in rows:
        scores.setdefault(r["system"], {}).setdefault(r["model"], []).append(float(r["sMAPE_1lt"]))
    wins = {"ESN": [], "NVAR": []}
    for system, by_model in sorted(scores.items()):
        naive = min(np.median(by_model[k.value]) for k in NAIVE_KINDS)
        for m in wins:
            if np.median(by_model[m]) < naive:
                wins[m].append(system)
    n = len(scores)
    frac = {m: len(v) / n for m, v in wins.items()}
    losses = {m: sorted(set(scores) - set(v)) for m, v in wins.items()}
    ok = all(f >= 0.8 for f in frac.values()) and core_hours < 4
    report(7, ok, f"ESN {len(wins['ESN'])}/{n}, NVAR {len(wins['NVAR'])}/{n} beat every naive baseline; "
                  f"losses {losses}; {core_hours:.2f} core-hours")


def test_criterion_08_reservoir_construction(report):
    radius = make_model("ESN", 0.5, 3, seed=7).reservoir_spectral_radius
    features = make_model("NVAR", 0.5, 3).n_features
    rng = np.random.default_rng(0)
    n, lag = 20000, 50
    x = np.empty((n, 3))
    x[: lag + 1] = rng.uniform(0.2, 0.8, (lag + 1, 3))
    r = np.array([3.9, 3.8, 3.7])
    for t in range(lag, n - 1):
        x[t + 1] = 0.95 * r * x[t] * (1 - x[t]) + 0.05 * x[t - lag][[1, 2, 0]]
    m = make_model("NVAR", 1.0, 3).fit(x)
    resid = float(np.max(np.abs(m.one_step(x) - x[lag + 1:])))
    ok = abs(radius - 0.99) < 1e-6 and features == 28 and resid < 1e-8
    report(8, ok, f"spectral radius {radius:.9f}, NVAR features {features}, one-step residual {resid:.2e}")


def test_criterion_09_analysis_formulas(report):
    ranks = np.array([[1, 2, 3, 4], [1, 2, 4, 3], [2, 1, 3, 4], [4, 3, 2, 1]], dtype=float)
    panel = RankPanel(ranks, list("abcd"), list("wxyz"), [1.0])
    c = rank_correlation_matrix(panel, 1.0)
    rowsum = np.array_equal(mutual_correlation(panel, 1.0), c.sum(axis=1))
    lam = np.array([0.02, 0.9, 0.15, 1.5, 0.4, 0.07])
    ident = RankPanel(np.vstack([lam, lam**2]), ["m0", "m1"], [f"s{i}" for i in range(6)], [1.0])
    rho = correlate_with_lyapunov(ident, lam, 1.0, n_bootstrap=200).rho
    ok = abs(c[0, 1] - 0.8) < 1e-12 and abs(oracles.spearman_by_hand(ranks[0], ranks[1]) - 0.8) < 1e-12
    ok = ok and rowsum and abs(rho - 1) < 1e-12
    report(9, ok, f"C01={c[0, 1]:.12f}, row sums exact={rowsum}, identity rho={rho}")


def test_criterion_10_determinism_and_resume(report, tmp_path):
    cfg = ExperimentConfig(metrics=("sMAPE",), invariants=False, seeds=(0, 1))
    systems, kinds = ["Lorenz", "Rossler", "MackeyGlass"], ["NaiveMean", "NVAR", "ESN"]

    def body(path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        col = rows[0].index("train_walltime_seconds")
        return [[c for i, c in enumerate(row) if i != col] for row in rows]

    run_campaign(cfg, systems, kinds, tmp_path / "a")
    run_campaign(cfg, systems, kinds, tmp_path / "b")
    run_campaign(cfg, systems, kinds, tmp_path / "c", limit=7)
    run_campaign(cfg, systems, kinds, tmp_path / "c")
    a, b, c = (body(tmp_path / d / "results.csv") for d in "abc")
    ok = a == b and a == c and len(a) == 19
    report(10, ok, f"rerun identical={a == b}, resumed identical={a == c}, rows={len(a) - 1}")
