"""Point-wise forecast accuracy metrics and horizon-indexed error curves.

Multivariate inputs reduce by averaging the per-dimension metric, except R2
and NRMSE whose pooled forms sum over dimensions before normalising.
Percentage-style metrics (sMAPE, MAPE, MARRE, CV) are scaled by 100.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dynamics import Trajectory


class MetricUndefinedError(ValueError):
    """The metric has a zero denominator or too few points for these inputs."""


class MetricKind(str, enum.Enum):
    sMAPE = "sMAPE"
    SpearmanCorr = "SpearmanCorr"
    NRMSE = "NRMSE"
    MASE = "MASE"
    R2 = "R2"
    WAPE = "WAPE"
    MSE = "MSE"
    MAE = "MAE"
    Pearson = "Pearson"
    KendallTau = "KendallTau"
    MAPE = "MAPE"
    MARRE = "MARRE"
    RMSLE = "RMSLE"
    CV = "CV"

    @property
    def range(self) -> tuple[float, float]:
        return _RANGES[self]

    @property
    def higher_is_better(self) -> bool:
        return self in _HIGHER

    @classmethod
    def parse(cls, name: "str | MetricKind") -> "MetricKind":
        if isinstance(name, cls):
            return name
        for k in cls:
            if k.value.lower() == str(name).lower():
                return k
        raise ValueError(f"unknown metric {name!r}")


_INF = math.inf
_RANGES = {
    MetricKind.sMAPE: (0.0, 200.0),
    MetricKind.SpearmanCorr: (-1.0, 1.0),
    MetricKind.NRMSE: (0.0, _INF),
    MetricKind.MASE: (0.0, _INF),
    MetricKind.R2: (-_INF, 1.0),
    MetricKind.WAPE: (0.0, _INF),
    MetricKind.MSE: (0.0, _INF),
    MetricKind.MAE: (0.0, _INF),
    MetricKind.Pearson: (-1.0, 1.0),
    MetricKind.KendallTau: (-1.0, 1.0),
    MetricKind.MAPE: (0.0, _INF),
    MetricKind.MARRE: (0.0, _INF),
    MetricKind.RMSLE: (0.0, _INF),
    MetricKind.CV: (0.0, _INF),
}
_HIGHER = {MetricKind.SpearmanCorr, MetricKind.R2, MetricKind.Pearson, MetricKind.KendallTau}
_MIN_POINTS = {MetricKind.MASE: 3}


def catalog() -> list[dict]:
    return [
        {"metric": k.value, "low": k.range[0], "high": k.range[1],
         "orientation": "higher" if k.higher_is_better else "lower"}
        for k in MetricKind
    ]


def _arr(x) -> np.ndarray:
    v = x.values if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def _safe_div(num, den):
    if np.any(den == 0):
        raise MetricUndefinedError("zero denominator")
    return num / den


def _corr(kind: MetricKind, y: np.ndarray, f: np.ndarray) -> float:
    vals = []
    for m in range(y.shape[1]):
        a, b = y[:, m], f[:, m]
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            raise MetricUndefinedError("constant series has no correlation")
        if kind is MetricKind.Pearson:
            v = np.corrcoef(a, b)[0, 1]
        elif kind is MetricKind.SpearmanCorr:
            v = np.corrcoef(stats.rankdata(a), stats.rankdata(b))[0, 1]
        else:
            v = stats.kendalltau(a, b).statistic
        vals.append(v)
    return float(np.mean(vals))


def evaluate(kind, truth, forecast, sigma: float | None = None) -> float:
    """Metric value of ``forecast`` against ``truth`` over the whole window.

    ``sigma`` is the per-system scale used by NRMSE (standard deviation of the
    training trajectory).
    """
    kind = MetricKind.parse(kind)
    y, f = _arr(truth), _arr(forecast)
    if y.shape != f.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {f.shape}")
    n = len(y)
    if n < _MIN_POINTS.get(kind, 2):
        raise MetricUndefinedError(f"{kind.value} needs at least {_MIN_POINTS.get(kind, 2)} points")
    e = y - f
    ae = np.abs(e)
    if kind is MetricKind.sMAPE:
        den = np.abs(y) + np.abs(f)
        ratio = np.divide(ae, den, out=np.zeros_like(ae), where=den > 0)
        return float(200.0 * ratio.mean())
    if kind is MetricKind.MSE:
        return float(np.mean(e * e))
    if kind is MetricKind.MAE:
        return float(ae.mean())
    if kind is MetricKind.NRMSE:
        if sigma is None:
            raise ValueError("NRMSE needs the training standard deviation sigma")
        if sigma <= 0:
            raise MetricUndefinedError("sigma must be positive")
        return float(math.sqrt(np.mean(e * e)) / sigma)
    if kind is MetricKind.MASE:
        scale = np.abs(np.diff(y, axis=0)).mean(axis=0)
        return float(np.mean(_safe_div(ae.mean(axis=0), scale)))
    if kind is MetricKind.R2:
        ss_tot = np.sum((y - y.mean(axis=0)) ** 2)
        return float(1.0 - _safe_div(np.sum(e * e), ss_tot))
    if kind is MetricKind.WAPE:
        return float(np.mean(_safe_div(ae.sum(axis=0), np.abs(y).sum(axis=0))))
    if kind is MetricKind.MAPE:
        return float(100.0 * np.mean(_safe_div(ae, np.abs(y)).mean(axis=0)))
    if kind is MetricKind.MARRE:
        return float(100.0 * np.mean(_safe_div(ae.mean(axis=0), np.ptp(y, axis=0))))
    if kind is MetricKind.RMSLE:
        lo = np.minimum(y.min(axis=0), f.min(axis=0))
        d = np.log1p(y - lo) - np.log1p(f - lo)
        return float(np.mean(np.sqrt(np.mean(d * d, axis=0))))
    if kind is MetricKind.CV:
        rmse = np.sqrt(np.mean(e * e, axis=0))
        return float(100.0 * np.mean(_safe_div(rmse, np.abs(y.mean(axis=0)))))
    return _corr(kind, y, f)


# ---------------------------------------------------------------------------
# curves


def horizon_grid(n: int, dt: float, lyapunov_max: float | None = None, n_log: int = 200) -> np.ndarray:
    """Window lengths (in points) at which curves are evaluated.

    About ``n_log`` log-spaced lengths from 1 to ``n`` plus the length whose
    end sits at one Lyapunov time.
    """
    idx = np.unique(np.round(np.geomspace(1, n, n_log)).astype(int))
    if lyapunov_max:
        one = int(round(1.0 / (lyapunov_max * dt)))
        if 1 <= one <= n:
            idx = np.union1d(idx, [one])
    return idx


@dataclass
class ErrorCurve:
    metric: str
    lengths: np.ndarray  # window length in points, one per horizon
    horizons: np.ndarray  # natural time since the origin
    values: np.ndarray
    lyapunov_scale: float | None
    undefined: np.ndarray  # metric undefined at this horizon (NaN value)
    divergent: np.ndarray  # horizon extends beyond a diverged rollout

    @property
    def lyapunov_horizons(self) -> np.ndarray:
        if not self.lyapunov_scale:
            return np.full_like(self.horizons, np.nan)
        return self.horizons * self.lyapunov_scale

    def at_lyapunov_time(self, lt: float = 1.0) -> float:
        """Value at the grid horizon closest to ``lt`` Lyapunov times."""
        k = int(np.argmin(np.abs(self.lyapunov_horizons - lt)))
        return float(self.values[k])

    def rows(self, system: str, model: str):
        for h, lh, v, dv in zip(self.horizons, self.lyapunov_horizons, self.values, self.divergent):
            yield {"system": system, "model": model, "metric": self.metric, "horizon": float(h),
                   "lyapunov_horizon": float(lh), "value": float(v), "divergent_flag": int(dv)}


def _prefix_values(kind: MetricKind, y: np.ndarray, f: np.ndarray, lengths: np.ndarray, sigma):
    """Vectorised prefix metrics; ``None`` when the kind needs the generic path."""
    e = y - f
    ae = np.abs(e)
    cnt = lengths.astype(float)[:, None]
    take = lengths - 1

    def cmean(a):
        return np.cumsum(a, axis=0)[take] / cnt

    if kind is MetricKind.sMAPE:
        den = np.abs(y) + np.abs(f)
        r = np.divide(ae, den, out=np.zeros_like(ae), where=den > 0)
        return 200.0 * cmean(r).mean(axis=1)
    if kind is MetricKind.MSE:
        return cmean(e * e).mean(axis=1)
    if kind is MetricKind.MAE:
        return cmean(ae).mean(axis=1)
    if kind is MetricKind.NRMSE:
        if sigma is None:
            raise ValueError("NRMSE needs the training standard deviation sigma")
        return np.sqrt(cmean(e * e).mean(axis=1)) / sigma
    if kind is MetricKind.WAPE:
        num, den = np.cumsum(ae, axis=0)[take], np.cumsum(np.abs(y), axis=0)[take]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (num / den).mean(axis=1)
        return np.where(np.any(den == 0, axis=1), np.nan, out)
    return None


def error_curve(kind, truth, forecast, lyapunov_max: float | None = None, dt: float | None = None,
                lengths=None, sigma: float | None = None, valid_length: int | None = None) -> ErrorCurve:
    """Cumulative metric from the origin to each horizon.

    ``valid_length`` is the number of trustworthy forecast points when a
    rollout diverged; horizons beyond it are marked divergent and hold NaN.
    """
    kind = MetricKind.parse(kind)
    y, f = _arr(truth), _arr(forecast)
    if dt is None:
        dt = truth.dt if isinstance(truth, Trajectory) else 1.0
    n = len(y)
    if lengths is None:
        lengths = horizon_grid(n, dt, lyapunov_max)
    lengths = np.asarray(lengths, dtype=int)
    valid = n if valid_length is None else int(valid_length)
    divergent = lengths > valid
    values = np.full(lengths.size, np.nan)
    ok = ~divergent
    fast = _prefix_values(kind, y[:valid], f[:valid], lengths[ok], sigma) if ok.any() else np.empty(0)
    if fast is not None:
        values[ok] = fast
        values[ok & (lengths < 2)] = np.nan
    else:
        for i in np.nonzero(ok)[0]:
            try:
                values[i] = evaluate(kind, y[: lengths[i]], f[: lengths[i]], sigma)
            except MetricUndefinedError:
                values[i] = np.nan
    undefined = np.isnan(values) & ~divergent
    return ErrorCurve(kind.value, lengths, lengths * dt, values, lyapunov_max, undefined, divergent)


def valid_prediction_time(curve: ErrorCurve, threshold: float = 50.0) -> float:
    """Lyapunov times elapsed before the curve first reaches ``threshold``.

    Undefined horizons are skipped; divergent horizons count as crossings.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    lh = curve.lyapunov_horizons
    if lh.size == 0:
        raise ValueError("empty curve")
    last = 0.0
    for h, v, dv in zip(lh, curve.values, curve.divergent):
        if dv or (not np.isnan(v) and v >= threshold):
            return float(last)
        if not np.isnan(v):
            last = h
    return float(last)


@dataclass
class DoublingTime:
    value: float  # Lyapunov times from the origin
    censored: bool  # the accumulated error never doubled inside the window
    reference: float  # reference horizon in Lyapunov times


def error_doubling_time(truth, forecast, lyapunov_max: float, dt: float | None = None,
                        reference_time: float | None = None) -> DoublingTime:
    """First horizon where the accumulated absolute error doubles its reference value.

    The reference horizon defaults to a tenth of a dominant period, i.e.
    10 samples at the standard granularity.  When the error never doubles (or
    is zero at the reference) the window length is returned with
    ``censored=True``.
    """
    y, f = _arr(truth), _arr(forecast)
    if len(y) < 10:
        raise ValueError("window must hold at least 10 points")
    if dt is None:
        dt = truth.dt if isinstance(truth, Trajectory) else 1.0
    if reference_time is None:
        gran = truth.granularity if isinstance(truth, Trajectory) and truth.granularity else 100.0
        reference_time = 0.1 * gran * dt
    acc = np.cumsum(np.abs(y - f).mean(axis=1))
    r = min(max(int(round(reference_time / dt)), 1), len(y)) - 1
    ref_lt = (r + 1) * dt * lyapunov_max
    if acc[r] > 0:
        hit = np.nonzero(acc[r + 1 :] >= 2.0 * acc[r])[0]
        if hit.size:
            return DoublingTime((r + 2 + int(hit[0])) * dt * lyapunov_max, False, ref_lt)
    return DoublingTime(len(y) * dt * lyapunov_max, True, ref_lt)
