"""Forecasting models behind one fit / autoregressive-rollout interface.

Every model is fitted on a training trajectory and rolled out from a warmup
segment that ends at the forecast origin.  Models never see values after the
origin: each prediction is fed back as the next input.

Time-indexed models (seasonal and Fourier) take the warmup to start where the
fit history started, so the forecast origin sits ``len(warmup)`` samples after
the start of the fit history.
"""

from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory

DIVERGENCE_FACTOR = 1e6


class ModelKind(str, enum.Enum):
    NaiveMean = "NaiveMean"
    NaiveDrift = "NaiveDrift"
    NaiveSeasonal = "NaiveSeasonal"
    KalmanUnforced = "KalmanUnforced"
    LinearRidge = "LinearRidge"
    FourierRegression = "FourierRegression"
    ExpSmoothing = "ExpSmoothing"
    Theta = "Theta"
    FourTheta = "FourTheta"
    DLinear = "DLinear"
    NLinear = "NLinear"
    ESN = "ESN"
    NVAR = "NVAR"

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, cls):
            return name
        for k in cls:
            if k.value.lower() == str(name).lower():
                return k
        raise ValueError(f"unknown model kind {name!r}")

    @property
    def uses_leakage(self) -> bool:
        return self in (ModelKind.ESN, ModelKind.NVAR)


NAIVE_KINDS = (ModelKind.NaiveMean, ModelKind.NaiveDrift, ModelKind.NaiveSeasonal, ModelKind.KalmanUnforced)

MODEL_GROUPS = {
    "naive": NAIVE_KINDS,
    "classical": (ModelKind.LinearRidge, ModelKind.FourierRegression, ModelKind.ExpSmoothing, ModelKind.Theta,
                  ModelKind.FourTheta),
    "linear": (ModelKind.DLinear, ModelKind.NLinear),
    "reservoir": (ModelKind.ESN, ModelKind.NVAR),
}


def model_group(kind: ModelKind) -> str:
    for name, kinds in MODEL_GROUPS.items():
        if kind in kinds:
            return name
    raise KeyError(kind)


@dataclass(frozen=True)
class HyperGrid:
    lookback_range: tuple = (2, 5, 10, 15, 20, 30, 40, 50)
    leakage_range: tuple = (0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0, 1.2)

    def __post_init__(self) -> None:
        for g in (self.lookback_range, self.leakage_range):
            if len(g) == 0 or list(g) != sorted(g):
                raise ValueError("grids must be nonempty and sorted")

    def values(self, kind: ModelKind) -> tuple:
        return self.leakage_range if ModelKind.parse(kind).uses_leakage else self.lookback_range

    def contains(self, kind: ModelKind, value) -> bool:
        g = self.values(kind)
        return any(math.isclose(value, v) for v in g)


class NotFittedError(RuntimeError):
    pass


class HistoryTooShortError(ValueError):
    pass


class ForecastTrajectory(Trajectory):
    """Rollout output.  When ``diverged`` is set, ``values`` holds only the
    trustworthy prefix and ``requested`` the asked-for horizon."""

    def __init__(self, values, dt, t0=0.0, system_name="", granularity=None, seed=None, diverged=False,
                 requested=None):
        super().__init__(values, dt, t0, system_name, granularity, seed)
        self.diverged = diverged
        self.requested = len(values) if requested is None else requested


def _as_values(x) -> np.ndarray:
    v = x.values if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def _ridge(x: np.ndarray, y: np.ndarray, alpha: float, penalize_first: bool = False) -> np.ndarray:
    """Ridge solution of ``x @ w ~ y``; the first column is an unpenalised intercept."""
    g = x.T @ x
    pen = np.full(x.shape[1], alpha)
    if not penalize_first:
        pen[0] = 0.0
    g[np.diag_indices_from(g)] += pen
    try:
        return np.linalg.solve(g, x.T @ y)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError("singular normal equations") from err


class _Scaler:
    def __init__(self, v: np.ndarray):
        self.mu = v.mean(axis=0)
        sd = v.std(axis=0)
        self.sd = np.where(sd > 0, sd, 1.0)

    def fwd(self, v):
        return (v - self.mu) / self.sd

    def inv(self, v):
        return v * self.sd + self.mu


class ForecastModel:
    """Base class; subclasses implement ``_fit`` and ``_rollout``."""

    kind: ModelKind
    needs_time_index = False

    def __init__(self, kind: ModelKind, hyper, dim: int, seed: int = 0, **options):
        self.kind = kind
        self.hyper = hyper
        self.dim = dim
        self.seed = seed
        self.options = options
        self.fitted = False
        self.flags: dict = {}
        self.amplitude = 1.0
        self.dt = 1.0

    # lookback-class hyperparameter as a window length
    @property
    def lookback(self) -> int:
        return int(self.hyper) if not self.kind.uses_leakage else 1

    @property
    def min_history(self) -> int:
        return 2 * self.lookback

    def fit(self, history) -> "ForecastModel":
        v = _as_values(history)
        if v.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} dimensions, got {v.shape[1]}")
        if len(v) < self.min_history:
            raise HistoryTooShortError(f"{self.kind.value} needs at least {self.min_history} points")
        if isinstance(history, Trajectory):
            self.dt = history.dt
        self.amplitude = float(np.max(np.abs(v))) or 1.0
        self._fit(v)
        self.fitted = True
        return self

    def predict(self, warmup, horizon: int) -> ForecastTrajectory:
        if not self.fitted:
            raise NotFittedError("predict called before fit")
        w = _as_values(warmup)
        if len(w) < self.lookback:
            raise HistoryTooShortError(f"warmup must hold at least {self.lookback} points")
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.asarray(self._rollout(w, int(horizon)), dtype=float).reshape(int(horizon), self.dim)
        bad = ~np.isfinite(out) | (np.abs(out) > DIVERGENCE_FACTOR * self.amplitude)
        rows = np.nonzero(bad.any(axis=1))[0]
        diverged = rows.size > 0
        if diverged:
            out = out[: rows[0]]
            if len(out) < 2:
                out = np.vstack([w[-1:], w[-1:]])[: max(len(out), 2)] if len(out) == 0 else np.vstack([out, out])
        dt = warmup.dt if isinstance(warmup, Trajectory) else self.dt
        name = warmup.system_name if isinstance(warmup, Trajectory) else ""
        gran = warmup.granularity if isinstance(warmup, Trajectory) else None
        return ForecastTrajectory(out, dt, 0.0, name, gran, self.seed, diverged, int(horizon))

    def summary(self) -> dict:
        return {"kind": self.kind.value, "hyper": self.hyper, "dim": self.dim, "seed": self.seed,
                "n_parameters": self.n_parameters(), "flags": dict(self.flags)}

    def n_parameters(self) -> int:
        return 0

    def _fit(self, v):  # pragma: no cover - abstract
        raise NotImplementedError

    def _rollout(self, w, horizon):  # pragma: no cover - abstract
        raise NotImplementedError


# ---------------------------------------------------------------------------
# naive baselines


class NaiveMean(ForecastModel):
    def _fit(self, v):
        self.mean = v.mean(axis=0)

    def _rollout(self, w, horizon):
        return np.tile(self.mean, (horizon, 1))

    @property
    def lookback(self):
        return 1

    def n_parameters(self):
        return self.dim


class NaiveDrift(ForecastModel):
    """Straight line through the first and last training points, continued from the origin."""

    def _fit(self, v):
        self.slope = (v[-1] - v[0]) / (len(v) - 1)

    def _rollout(self, w, horizon):
        return w[-1] + np.arange(1, horizon + 1)[:, None] * self.slope

    @property
    def lookback(self):
        return 1

    def n_parameters(self):
        return self.dim


class NaiveSeasonal(ForecastModel):
    """Mean motif over non-overlapping windows of the dominant period, repeated."""

    needs_time_index = True

    def _fit(self, v):
        p = int(self.options.get("period", 100))
        p = min(p, len(v))
        k = len(v) // p
        self.period = p
        self.motif = v[: k * p].reshape(k, p, self.dim).mean(axis=0)

    def _rollout(self, w, horizon):
        phase = (len(w) + np.arange(horizon)) % self.period
        return self.motif[phase]

    @property
    def lookback(self):
        return 1

    @property
    def min_history(self):
        return 2

    def n_parameters(self):
        return self.motif.size if self.fitted else 0


class KalmanUnforced(ForecastModel):
    """Linear-Gaussian state space with a ridge-fitted transition matrix.

    The filter assimilates the last ``lookback`` warmup points, then the state
    is propagated by the transition matrix alone.
    """

    obs_noise = 1e-4

    def _fit(self, v):
        self.scaler = _Scaler(v)
        z = self.scaler.fwd(v)
        x = np.hstack([np.ones((len(z) - 1, 1)), z[:-1]])
        w = _ridge(x, z[1:], 1e-6)
        self.c, self.a = w[0], w[1:].T
        resid = z[1:] - x @ w
        self.q = np.cov(resid.T).reshape(self.dim, self.dim) + 1e-12 * np.eye(self.dim)

    def _rollout(self, w, horizon):
        z = self.scaler.fwd(w[-self.lookback :])
        d = self.dim
        r = self.obs_noise * np.eye(d)
        x, p = z[0].copy(), np.eye(d)
        for obs in z[1:]:
            x = self.a @ x + self.c
            p = self.a @ p @ self.a.T + self.q
            k = np.linalg.solve((p + r).T, p.T).T
            x = x + k @ (obs - x)
            p = (np.eye(d) - k) @ p
        out = np.empty((horizon, d))
        for i in range(horizon):
            x = self.a @ x + self.c
            out[i] = x
        return self.scaler.inv(out)

    def n_parameters(self):
        return self.dim * (self.dim + 1)


# ---------------------------------------------------------------------------
# regression models


class LinearRidge(ForecastModel):
    """Next state from ``lookback`` stacked past states; ridge 0.01, free intercept."""

    alpha = 0.01

    def _fit(self, v):
        self.scaler = _Scaler(v)
        z = self.scaler.fwd(v)
        L = self.lookback
        feats = np.hstack([z[L - 1 - j : len(z) - 1 - j] for j in range(L)])
        x = np.hstack([np.ones((len(feats), 1)), feats])
        self.w = _ridge(x, z[L:], self.alpha)

    def _rollout(self, w, horizon):
        L = self.lookback
        buf = list(self.scaler.fwd(w[-L:])[::-1])  # most recent first
        out = np.empty((horizon, self.dim))
        for i in range(horizon):
            nxt = self.w[0] + np.concatenate(buf[:L]) @ self.w[1:]
            out[i] = nxt
            buf.insert(0, nxt)
        return self.scaler.inv(out)

    def n_parameters(self):
        return (self.lookback * self.dim + 1) * self.dim


def _refine_peak(mag: np.ndarray, k: int) -> float:
    """Parabolic interpolation of a spectral peak on log magnitude."""
    if 0 < k < len(mag) - 1:
        a, b, c = np.log(mag[k - 1 : k + 2] + 1e-300)
        den = a - 2 * b + c
        if den < 0:
            return k + 0.5 * (a - c) / den
    return float(k)


class FourierRegression(ForecastModel):
    """Least-squares sinusoids at the ``lookback`` strongest frequencies per dimension."""

    needs_time_index = True

    def _fit(self, v):
        n = len(v)
        t = np.arange(n)
        self.components = []
        for m in range(self.dim):
            y = v[:, m] - v[:, m].mean()
            mag = np.abs(np.fft.rfft(y))
            mag[0] = 0.0
            order = [k for k in np.argsort(mag)[::-1] if k > 0][: self.lookback]
            freqs = np.array(sorted({_refine_peak(mag, k) / n for k in order}))
            cols = [np.ones(n)]
            for f in freqs:
                cols += [np.cos(2 * np.pi * f * t), np.sin(2 * np.pi * f * t)]
            x = np.stack(cols, axis=1)
            coef, *_ = np.linalg.lstsq(x, v[:, m], rcond=None)
            self.components.append((freqs, coef))

    def _rollout(self, w, horizon):
        t = len(w) + np.arange(horizon)
        out = np.empty((horizon, self.dim))
        for m, (freqs, coef) in enumerate(self.components):
            val = np.full(horizon, coef[0])
            for j, f in enumerate(freqs):
                val += coef[1 + 2 * j] * np.cos(2 * np.pi * f * t) + coef[2 + 2 * j] * np.sin(2 * np.pi * f * t)
            out[:, m] = val
        return out

    @property
    def min_history(self):
        return max(2 * self.lookback, 4)

    def n_parameters(self):
        return sum(1 + 3 * len(f) for f, _ in self.components) if self.fitted else 0


# ---------------------------------------------------------------------------
# exponential smoothing family

_ALPHAS = np.linspace(0.05, 1.0, 20)


def _ses_levels(y: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    """One-step-ahead forecasts and final level of simple exponential smoothing."""
    level = y[0]
    fc = np.empty_like(y)
    for i, obs in enumerate(y):
        fc[i] = level
        level = level + alpha * (obs - level)
    return fc, level


def _best_alpha(y: np.ndarray) -> float:
    best, best_err = 1.0, math.inf
    for a in _ALPHAS:
        fc, _ = _ses_levels(y, a)
        err = float(np.sum((y[1:] - fc[1:]) ** 2))
        if err < best_err - 1e-12:
            best, best_err = float(a), err
    return best


def _seasonal_indices(y: np.ndarray, period: int) -> np.ndarray:
    """Additive seasonal indices from a centred moving average (zero-mean)."""
    if period < 2 or len(y) < 2 * period:
        return np.zeros(max(period, 1))
    kern = np.ones(period) / period
    if period % 2 == 0:
        kern = np.convolve(kern, [0.5, 0.5])
    trend = np.convolve(y, kern, mode="same")
    half = len(kern) // 2
    detr = (y - trend)[half : len(y) - half]
    phase = np.arange(half, len(y) - half) % period
    idx = np.array([detr[phase == j].mean() for j in range(period)])
    return idx - idx.mean()


class _Seasonal(ForecastModel):
    needs_time_index = True

    @property
    def period(self) -> int:
        return self.lookback

    @property
    def lookback(self):
        return int(self.hyper)

    def _fit(self, v):
        self.season = np.stack([_seasonal_indices(v[:, m], self.period) for m in range(self.dim)], axis=1)
        des = v - self.season[np.arange(len(v)) % self.period]
        self.alpha = np.array([_best_alpha(des[:, m]) for m in range(self.dim)])
        self._fit_deseasonalised(des)

    def _fit_deseasonalised(self, des):
        pass

    def _deseason(self, w):
        return w - self.season[np.arange(len(w)) % self.period]

    def _reseason(self, out, start):
        return out + self.season[(start + np.arange(len(out))) % self.period]

    def n_parameters(self):
        return self.season.size + 2 * self.dim if self.fitted else 0


class ExpSmoothing(_Seasonal):
    """Simple exponential smoothing on the seasonally adjusted series (period = lookback)."""

    def _rollout(self, w, horizon):
        des = self._deseason(w)
        level = np.array([_ses_levels(des[:, m], self.alpha[m])[1] for m in range(self.dim)])
        return self._reseason(np.tile(level, (horizon, 1)), len(w))


def _linear_fit(y: np.ndarray) -> tuple[float, float]:
    t = np.arange(len(y), dtype=float)
    b, a = np.polyfit(t, y, 1)
    return float(a), float(b)


class Theta(_Seasonal):
    """Theta method with theta = 2 lines: half trend extrapolation, half smoothed theta line."""

    thetas = (2.0,)

    def _fit_deseasonalised(self, des):
        self.trend = [_linear_fit(des[:, m]) for m in range(self.dim)]
        n = len(des)
        t = np.arange(n)
        self.line_alpha = {}
        for th in self.thetas:
            if th == 0:
                continue
            for m in range(self.dim):
                a, b = self.trend[m]
                line = th * des[:, m] + (1 - th) * (a + b * t)
                self.line_alpha[(th, m)] = _best_alpha(line)

    def _rollout(self, w, horizon):
        des = self._deseason(w)
        n0 = len(w)
        t_in = np.arange(n0)
        t_out = n0 + np.arange(horizon)
        out = np.zeros((horizon, self.dim))
        for m in range(self.dim):
            a, b = self.trend[m]
            trend_out = a + b * t_out
            parts = [trend_out]  # theta = 0 line
            for th in self.thetas:
                if th == 0:
                    continue
                line = th * des[:, m] + (1 - th) * (a + b * t_in)
                _, level = _ses_levels(line, self.line_alpha[(th, m)])
                parts.append(np.full(horizon, level))
            if 0.0 in self.thetas:
                out[:, m] = np.mean(parts, axis=0)
            else:
                out[:, m] = 0.5 * (trend_out + np.mean(parts[1:], axis=0))
        return self._reseason(out, n0)


class FourTheta(Theta):
    """Average of the theta = 0, 1, 2, 3 line forecasts."""

    thetas = (0.0, 1.0, 2.0, 3.0)


# ---------------------------------------------------------------------------
# linear heads on lookback windows


def _moving_average(win: np.ndarray, kernel: int) -> np.ndarray:
    """Edge-padded moving average along axis 1 of ``(n, L)`` windows."""
    k = min(kernel, win.shape[1])
    if k % 2 == 0:
        k -= 1
    k = max(k, 1)
    half = k // 2
    pad = np.concatenate([np.repeat(win[:, :1], half, 1), win, np.repeat(win[:, -1:], half, 1)], axis=1)
    c = np.cumsum(np.pad(pad, ((0, 0), (1, 0))), axis=1)
    return (c[:, k:] - c[:, :-k]) / k


class _WindowLinear(ForecastModel):
    """One linear head shared by all channels, solved in closed form."""

    kernel = 25
    alpha = 1e-8

    def _features(self, win: np.ndarray) -> np.ndarray:  # (n, L) -> (n, F)
        raise NotImplementedError

    def _target(self, win, nxt):
        return nxt

    def _untarget(self, win, pred):
        return pred

    def _fit(self, v):
        self.scaler = _Scaler(v)
        z = self.scaler.fwd(v)
        L = self.lookback
        wins, nxt = [], []
        for m in range(self.dim):
            s = np.lib.stride_tricks.sliding_window_view(z[:, m], L)[:-1]
            wins.append(s)
            nxt.append(z[L:, m])
        win, y = np.concatenate(wins), np.concatenate(nxt)
        x = np.hstack([np.ones((len(win), 1)), self._features(win)])
        self.w = _ridge(x, self._target(win, y), self.alpha)

    def _rollout(self, w, horizon):
        L = self.lookback
        hist = self.scaler.fwd(w[-L:]).T.copy()  # (D, L)
        out = np.empty((horizon, self.dim))
        for i in range(horizon):
            x = np.hstack([np.ones((self.dim, 1)), self._features(hist)])
            pred = self._untarget(hist, x @ self.w)
            out[i] = pred
            hist = np.concatenate([hist[:, 1:], pred[:, None]], axis=1)
        return self.scaler.inv(out)

    def n_parameters(self):
        return self.w.size if self.fitted else 0


class DLinear(_WindowLinear):
    """Moving-average trend and remainder, each with its own linear head."""

    def _features(self, win):
        trend = _moving_average(win, self.kernel)
        return np.hstack([trend, win - trend])


class NLinear(_WindowLinear):
    """Linear head on the window minus its last value; the last value is added back."""

    def _features(self, win):
        return win - win[:, -1:]

    def _target(self, win, nxt):
        return nxt - win[:, -1]

    def _untarget(self, win, pred):
        return pred + win[:, -1]


# ---------------------------------------------------------------------------
# reservoir models


@functools.lru_cache(maxsize=8)
def _reservoir(seed, n, dim, connectivity, input_connectivity, input_scaling, radius):
    """Seeded reservoir, input and bias weights; independent of the leakage."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, n)) * (rng.random((n, n)) < connectivity)
    eig = np.linalg.eigvals(w)
    scale = radius / np.max(np.abs(eig))
    mask = rng.random((n, dim)) < input_connectivity
    w_in = input_scaling * rng.uniform(-1, 1, (n, dim)) * mask
    bias = input_scaling * rng.uniform(-1, 1, n) * (rng.random(n) < input_connectivity)
    out = (w * scale, eig * scale, w_in, bias)
    for a in out:
        a.setflags(write=False)
    return out


class ESN(ForecastModel):
    """Leaky echo state network with a ridge readout on ``[1, u, r]``.

    ``r <- (1 - a) r + a tanh(W r + W_in u + b)`` with a sparse Gaussian
    reservoir rescaled to spectral radius 0.99.
    """

    n_units = 500
    spectral_radius = 0.99
    connectivity = 0.1
    input_connectivity = 0.2
    input_scaling = 1.0
    ridge = 1e-4
    washout = 100

    def __init__(self, kind, hyper, dim, seed=0, **options):
        super().__init__(kind, hyper, dim, seed, **options)
        n = int(options.get("n_units", self.n_units))
        self.W, self.eigenvalues, self.W_in, self.bias = _reservoir(seed, n, dim, self.connectivity,
                                                                    self.input_connectivity, self.input_scaling,
                                                                    self.spectral_radius)
        a = float(hyper)
        self.effective_radius = float(np.max(np.abs((1 - a) + a * self.eigenvalues)))
        if self.effective_radius > 1.05:
            self.flags["unstable_reservoir"] = True
            warnings.warn(f"leakage {a} gives effective spectral radius {self.effective_radius:.3f} > 1.05",
                          RuntimeWarning, stacklevel=3)

    @property
    def reservoir_spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.W))))

    @property
    def min_history(self):
        return self.washout + 2

    def _step(self, r, u):
        a = float(self.hyper)
        return (1 - a) * r + a * np.tanh(self.W @ r + self.W_in @ u + self.bias)

    def _drive(self, z):
        r = np.zeros(self.W.shape[0])
        states = np.empty((len(z), len(r)))
        for i, u in enumerate(z):
            r = self._step(r, u)
            states[i] = r
        return states

    def _fit(self, v):
        self.scaler = _Scaler(v)
        z = self.scaler.fwd(v)
        states = self._drive(z[:-1])
        keep = slice(min(self.washout, len(z) // 2), None)
        x = np.hstack([np.ones((len(states), 1)), z[:-1], states])[keep]
        self.w_out = _ridge(x, z[1:][keep], self.ridge, penalize_first=True)

    def _rollout(self, w, horizon):
        z = self.scaler.fwd(w)
        r = self._drive(z)[-1]
        u = z[-1]
        out = np.empty((horizon, self.dim))
        with np.errstate(all="ignore"):
            for i in range(horizon):
                u = np.concatenate([[1.0], u, r]) @ self.w_out
                out[i] = u
                if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e8:
                    out[i:] = np.nan
                    break
                r = self._step(r, u)
        return self.scaler.inv(out)

    def n_parameters(self):
        return self.w_out.size if self.fitted else 0


class NVAR(ForecastModel):
    """Nonlinear vector autoregression on two delay taps.

    Features are a constant, the taps at lags 0 and 50, and their unique
    quadratic monomials.  The leakage ``a`` mixes the readout with the
    current state: ``x_next = (1 - a) x + a W phi``.
    """

    taps = (0, 50)
    ridge = 1e-4

    @property
    def lookback(self):
        return max(self.taps) + 1

    @property
    def n_features(self) -> int:
        k = len(self.taps) * self.dim
        return 1 + k + k * (k + 1) // 2

    def _phi(self, lin: np.ndarray) -> np.ndarray:
        k = lin.shape[-1]
        iu = np.triu_indices(k)
        quad = (lin[..., :, None] * lin[..., None, :])[..., iu[0], iu[1]]
        ones = np.ones(lin.shape[:-1] + (1,))
        return np.concatenate([ones, lin, quad], axis=-1)

    def _lin(self, z: np.ndarray, end: int) -> np.ndarray:
        return np.concatenate([z[end - lag] for lag in self.taps])

    def _fit(self, v):
        self.scaler = _Scaler(v)
        z = self.scaler.fwd(v)
        s = self.lookback - 1
        lin = np.concatenate([z[s - lag : len(z) - 1 - lag] for lag in self.taps], axis=1)
        a = float(self.hyper)
        target = (z[s + 1 :] - (1 - a) * z[s:-1]) / a
        self.w = _ridge(self._phi(lin), target, self.ridge)

    def one_step(self, history) -> np.ndarray:
        """Teacher-forced one-step predictions over a history (original units)."""
        z = self.scaler.fwd(_as_values(history))
        s = self.lookback - 1
        lin = np.concatenate([z[s - lag : len(z) - 1 - lag] for lag in self.taps], axis=1)
        a = float(self.hyper)
        pred = (1 - a) * z[s:-1] + a * self._phi(lin) @ self.w
        return self.scaler.inv(pred)

    def _rollout(self, w, horizon):
        z = list(self.scaler.fwd(w[-self.lookback :]))
        a = float(self.hyper)
        out = np.empty((horizon, self.dim))
        with np.errstate(all="ignore"):
            for i in range(horizon):
                lin = np.concatenate([z[-1 - lag] for lag in self.taps])
                nxt = (1 - a) * z[-1] + a * self._phi(lin) @ self.w
                out[i] = nxt
                if not np.all(np.isfinite(nxt)) or np.max(np.abs(nxt)) > 1e8:
                    out[i:] = np.nan
                    break
                z.append(nxt)
        return self.scaler.inv(out)

    def n_parameters(self):
        return self.w.size if self.fitted else 0


_CLASSES = {
    ModelKind.NaiveMean: NaiveMean,
    ModelKind.NaiveDrift: NaiveDrift,
    ModelKind.NaiveSeasonal: NaiveSeasonal,
    ModelKind.KalmanUnforced: KalmanUnforced,
    ModelKind.LinearRidge: LinearRidge,
    ModelKind.FourierRegression: FourierRegression,
    ModelKind.ExpSmoothing: ExpSmoothing,
    ModelKind.Theta: Theta,
    ModelKind.FourTheta: FourTheta,
    ModelKind.DLinear: DLinear,
    ModelKind.NLinear: NLinear,
    ModelKind.ESN: ESN,
    ModelKind.NVAR: NVAR,
}


def make_model(kind, hyper, dim: int, seed: int = 0, grid: HyperGrid | None = None, **options) -> ForecastModel:
    """Unfitted model of the given kind; ``hyper`` must lie on the grid."""
    kind = ModelKind.parse(kind)
    grid = HyperGrid() if grid is None else grid
    if not grid.contains(kind, hyper):
        raise ValueError(f"{kind.value}: hyperparameter {hyper!r} is not on the grid {grid.values(kind)}")
    return _CLASSES[kind](kind, hyper, dim, seed, **options)
