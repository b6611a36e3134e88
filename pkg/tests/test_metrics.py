import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chaosbench.dynamics import Trajectory
from chaosbench.metrics import (
    ErrorCurve,
    MetricKind,
    MetricUndefinedError,
    catalog,
    error_curve,
    error_doubling_time,
    evaluate,
    horizon_grid,
    valid_prediction_time,
)

import oracles

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
positive = st.floats(0.01, 100, allow_nan=False, allow_infinity=False)


def series(elements=finite, min_size=3, max_size=40):
    return st.integers(min_size, max_size).flatmap(lambda n: arrays(float, n, elements=elements))


def test_hand_values():
    assert abs(evaluate("sMAPE", [1, 1], [3, 1]) - 50.0) < 1e-12
    assert abs(evaluate("WAPE", [1, 2, 3], [1, 2, 6]) - 0.5) < 1e-12
    assert abs(evaluate("MASE", [1, 2, 3], [2, 3, 4]) - 1.0) < 1e-12


def test_smape_matches_oracle():
    rng = np.random.default_rng(0)
    y, f = rng.standard_normal(50), rng.standard_normal(50)
    assert evaluate("sMAPE", y, f) == pytest.approx(oracles.smape_by_hand(y, f), abs=1e-12)


def test_r2_of_mean_forecast_is_zero():
    y = np.array([1.0, 4.0, 2.0, 7.0])
    assert evaluate("R2", y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-15)


def test_other_hand_values():
    y, f = np.array([1.0, 2.0, 4.0]), np.array([2.0, 2.0, 2.0])
    assert evaluate("MSE", y, f) == pytest.approx(5 / 3)
    assert evaluate("MAE", y, f) == pytest.approx(1.0)
    assert evaluate("MAPE", y, f) == pytest.approx(100 * (1 + 0 + 0.5) / 3)
    assert evaluate("MARRE", y, f) == pytest.approx(100 * 1.0 / 3)
    assert evaluate("CV", y, f) == pytest.approx(100 * math.sqrt(5 / 3) / (7 / 3))
    assert evaluate("NRMSE", y, f, sigma=2.0) == pytest.approx(math.sqrt(5 / 3) / 2)


def test_rmsle_shift_handles_negatives():
    y = np.array([-3.0, -1.0, 2.0])
    assert evaluate("RMSLE", y, y) == 0.0
    assert np.isfinite(evaluate("RMSLE", y, -y))


def test_multivariate_averages_dimensions():
    y = np.array([[1.0, 1.0], [2.0, 1.0], [3.0, 1.0]])
    f = np.array([[1.0, 1.0], [2.0, 1.0], [6.0, 1.0]])
    assert evaluate("WAPE", y, f) == pytest.approx((0.5 + 0.0) / 2)


def test_nrmse_needs_sigma():
    with pytest.raises(ValueError):
        evaluate("NRMSE", [1.0, 2.0], [1.0, 2.0])


def test_undefined_metrics_signal():
    with pytest.raises(MetricUndefinedError):
        evaluate("MASE", [1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(MetricUndefinedError):
        evaluate("MASE", [1.0, 2.0], [1.0, 2.0])
    with pytest.raises(MetricUndefinedError):
        evaluate("MAPE", [0.0, 1.0], [1.0, 1.0])
    with pytest.raises(MetricUndefinedError):
        evaluate("R2", [2.0, 2.0], [1.0, 3.0])
    with pytest.raises(MetricUndefinedError):
        evaluate("Pearson", [1.0, 2.0, 3.0], [1.0, 1.0, 1.0])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        evaluate("MAE", [1.0, 2.0], [1.0, 2.0, 3.0])


def test_smape_zero_over_zero():
    assert evaluate("sMAPE", [0.0, 1.0], [0.0, 1.0]) == 0.0


def test_catalog_and_parse():
    rows = catalog()
    assert len(rows) == 14
    assert {r["metric"] for r in rows} == {k.value for k in MetricKind}
    assert MetricKind.parse("smape") is MetricKind.sMAPE
    assert MetricKind.sMAPE.range == (0.0, 200.0)
    assert MetricKind.R2.higher_is_better and not MetricKind.MSE.higher_is_better
    with pytest.raises(ValueError):
        MetricKind.parse("MI")


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=300, deadline=None)
@given(series())
def test_smape_identity(y):
    assert evaluate("sMAPE", y, y) == 0.0


@settings(max_examples=300, deadline=None)
@given(series().flatmap(lambda y: st.tuples(st.just(y), arrays(float, y.size, elements=finite))))
def test_smape_bounded_and_symmetric(pair):
    y, f = pair
    v = evaluate("sMAPE", y, f)
    assert 0.0 <= v <= 200.0 + 1e-9
    assert v == pytest.approx(evaluate("sMAPE", f, y), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(series(positive), st.lists(positive, min_size=40, max_size=40))
def test_smape_is_200_for_opposite_signs(y, mags):
    f = -np.asarray(mags[: y.size])
    assert evaluate("sMAPE", y, f) == pytest.approx(200.0, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(series(positive).flatmap(lambda y: st.tuples(st.just(y), arrays(float, y.size, elements=positive))),
       st.floats(0.01, 100))
def test_scale_invariant_metrics(pair, c):
    y, f = pair
    for kind in ("MAPE", "WAPE", "sMAPE"):
        assert evaluate(kind, c * y, c * f) == pytest.approx(evaluate(kind, y, f), rel=1e-9)
    if np.ptp(y) > 0 and np.any(np.diff(y) != 0):
        assert evaluate("MASE", c * y, c * f) == pytest.approx(evaluate("MASE", y, f), rel=1e-9)


# well separated values so affine maps cannot merge ties by rounding
distinct = st.lists(st.integers(-5000, 5000), min_size=5, max_size=30, unique=True).map(lambda v: np.array(v) / 100)


@settings(max_examples=1000, deadline=None)
@given(distinct, st.integers(0, 2**32 - 1), st.sampled_from(["exp", "cube", "affine", "arctan"]))
def test_rank_correlations_invariant_under_monotone_maps(y, seed, transform):
    y = np.asarray(y)
    f = y + np.random.default_rng(seed).standard_normal(y.size) * 10
    g = {"exp": lambda v: np.exp(v / 25), "cube": lambda v: v**3, "affine": lambda v: 3 * v + 2,
         "arctan": np.arctan}[transform]
    for kind in ("SpearmanCorr", "KendallTau"):
        try:
            base = evaluate(kind, y, f)
        except MetricUndefinedError:
            return
        assert evaluate(kind, y, g(f)) == pytest.approx(base, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(distinct, st.floats(0.1, 10), st.floats(-10, 10))
def test_pearson_spearman_affine_invariant(y, a, b):
    y = np.asarray(y)
    f = np.sin(y) + 0.1 * y
    if np.ptp(f) == 0:
        return
    for kind in ("Pearson", "SpearmanCorr"):
        assert evaluate(kind, a * y + b, f) == pytest.approx(evaluate(kind, y, f), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (5, 30), elements=st.floats(-10, 10)), arrays(float, 30, elements=st.floats(-10, 10)))
def test_mse_and_rmse_rank_identically(cands, y):
    mse = [evaluate("MSE", y, c) for c in cands]
    nrmse = [evaluate("NRMSE", y, c, sigma=1.7) for c in cands]
    assert np.array_equal(np.argsort(mse, kind="stable"), np.argsort(nrmse, kind="stable"))


# ---------------------------------------------------------------------------
# curves


def test_perfect_forecast_curve_is_zero():
    y = np.sin(np.arange(500) * 0.1)[:, None] + 2
    c = error_curve("sMAPE", y, y, lyapunov_max=0.5, dt=0.1)
    assert np.all(c.values[~c.undefined] == 0)


def test_curve_final_value_equals_evaluate():
    rng = np.random.default_rng(1)
    y, f = rng.standard_normal((300, 3)), rng.standard_normal((300, 3))
    for kind in ("sMAPE", "MAE", "WAPE", "MASE", "SpearmanCorr"):
        c = error_curve(kind, y, f, dt=0.1)
        assert c.lengths[-1] == 300
        assert c.values[-1] == pytest.approx(evaluate(kind, y, f), rel=1e-12)
    c = error_curve("NRMSE", y, f, dt=0.1, sigma=2.0)
    assert c.values[-1] == pytest.approx(evaluate("NRMSE", y, f, sigma=2.0))


def test_curve_increases_after_switch():
    t = np.arange(400) * 0.05
    y = np.sin(t) + 0.0
    f = np.where(np.arange(400) < 200, y, -y)
    c = error_curve("sMAPE", y, f, dt=0.05, lengths=np.arange(2, 401))
    after = c.values[c.lengths > 200]
    assert np.all(np.diff(after) > 0)
    assert np.all(c.values[c.lengths <= 200] == 0)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 60, elements=st.floats(-5, 5)), arrays(float, 60, elements=st.floats(-5, 5)))
def test_accumulated_error_nondecreasing(y, f):
    c = error_curve("MAE", y, f, dt=1.0, lengths=np.arange(2, 61))
    acc = c.lengths * c.values
    assert np.all(np.diff(acc) >= -1e-9)


def test_curve_trajectory_inputs_and_rows():
    y = Trajectory(np.sin(np.arange(200) * 0.1)[:, None] + 2, 0.1)
    c = error_curve("sMAPE", y, y.with_values(y.values * 1.1), lyapunov_max=1.0)
    assert c.horizons == pytest.approx(c.lengths * 0.1)
    rows = list(c.rows("S", "M"))
    assert set(rows[0]) == {"system", "model", "metric", "horizon", "lyapunov_horizon", "value", "divergent_flag"}


def test_divergent_tail_flagged():
    y = np.ones((100, 1)) + np.arange(100)[:, None]
    c = error_curve("sMAPE", y, y, dt=1.0, lengths=np.arange(2, 101), valid_length=40)
    assert np.all(c.divergent == (c.lengths > 40))
    assert np.all(np.isnan(c.values[c.divergent]))
    assert not c.undefined.any()


def test_horizon_grid_includes_one_lyapunov_time():
    g = horizon_grid(5000, 0.01, lyapunov_max=0.9)
    assert np.all(np.diff(g) > 0)
    assert g[0] == 1 and g[-1] == 5000
    assert int(round(1 / (0.9 * 0.01))) in g


def _curve(lh, values):
    lh = np.asarray(lh, float)
    v = np.asarray(values, float)
    return ErrorCurve("sMAPE", np.arange(1, lh.size + 1), lh, v, 1.0, np.zeros(lh.size, bool), np.zeros(lh.size, bool))


def test_vpt_always_below():
    lh = np.linspace(0.05, 5, 100)
    assert valid_prediction_time(_curve(lh, np.full(100, 10.0))) == pytest.approx(5.0)


def test_vpt_constructed_crossing():
    lh = np.linspace(0.05, 5, 100)
    vpt = valid_prediction_time(_curve(lh, 50 * lh / 1.5))
    assert abs(vpt - 1.5) <= lh[1] - lh[0]


def test_vpt_starts_above():
    lh = np.linspace(0.05, 5, 100)
    assert valid_prediction_time(_curve(lh, np.full(100, 80.0))) == 0.0


def test_vpt_first_crossing_convention():
    lh = np.arange(1, 6, dtype=float)
    assert valid_prediction_time(_curve(lh, [10, 60, 10, 10, 10])) == 1.0
    with pytest.raises(ValueError):
        valid_prediction_time(_curve(lh, np.zeros(5)), threshold=0)


def test_doubling_exponential_growth():
    lam, dt = 1.0, 0.01
    t = np.arange(1, 1001) * dt
    truth = np.zeros((1000, 1))
    fc = np.exp(lam * t)[:, None]
    res = error_doubling_time(truth, fc, lam, dt=dt, reference_time=5.0)
    assert not res.censored
    assert abs((res.value - res.reference) - math.log(2) / lam) <= 2 * dt


def test_doubling_sentinels():
    truth = np.zeros((100, 1))
    zero = error_doubling_time(truth, truth, 0.5, dt=0.1)
    assert zero.censored and zero.value == pytest.approx(100 * 0.1 * 0.5)
    # error confined to the first step never accumulates further
    spike = np.zeros((100, 1))
    spike[0] = 1.0
    assert error_doubling_time(truth, spike, 0.5, dt=0.1).censored


def test_doubling_needs_ten_points():
    with pytest.raises(ValueError):
        error_doubling_time(np.zeros((5, 1)), np.ones((5, 1)), 1.0)
