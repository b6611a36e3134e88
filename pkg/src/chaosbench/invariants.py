"""Dynamical invariants: Lyapunov spectra, fractal dimensions and entropy."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import SystemSpec, Trajectory, attractor_ensemble, integrate_states
from .lyapunov import (  # noqa: F401  re-exported
    LONG_ENSEMBLE,
    SHORT_ENSEMBLE,
    CycleLog,
    ErgodicityWarning,
    LyapunovEstimate,
    NaiveResult,
    PerturbationConfig,
    TwoRouteResult,
    agree_to_sig_figs,
    ensemble_lyapunov,
    ensemble_lyapunov_estimate,
    ergodicity_check,
    lyapunov_max_naive,
    lyapunov_spectrum_qr,
    naive_cycles,
    qr_log_increments,
    two_route_lyapunov,
)


class DimensionUndefinedError(ValueError):
    """Too few radii with usable pair counts to fit a scaling exponent."""


class ScalingRegionWarning(UserWarning):
    """Local slope of log C(r) drifts by more than 20% across the fitted region."""


class EntropyUndefinedWarning(UserWarning):
    """No template matches at some scale; sample entropy is infinite there."""


def _values(traj) -> np.ndarray:
    v = traj.values if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return v[:, None] if v.ndim == 1 else v


# ---------------------------------------------------------------------------
# Kaplan-Yorke


def kaplan_yorke(spectrum) -> float:
    """Kaplan-Yorke dimension of a spectrum sorted in descending order."""
    lam = np.asarray(spectrum, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("spectrum must be a nonempty 1-D sequence")
    if np.any(np.diff(lam) > 0):
        raise ValueError("spectrum must be sorted in descending order")
    if lam[0] < 0:
        return 0.0
    partial = np.cumsum(lam)
    nonneg = np.nonzero(partial >= 0)[0]
    j = int(nonneg[-1]) + 1  # number of exponents with nonnegative partial sum
    if j == lam.size:
        return float(lam.size)
    return j + float(partial[j - 1]) / abs(float(lam[j]))


# ---------------------------------------------------------------------------
# Grassberger-Procaccia


@dataclass
class CorrelationIntegral:
    radii: np.ndarray
    counts: np.ndarray
    n_pairs: int
    dimension: float
    local_slopes: np.ndarray
    slope_variation: float

    @property
    def flagged(self) -> bool:
        return self.slope_variation > 0.2


def _theiler_counts(x: np.ndarray, radii: np.ndarray, window: int) -> np.ndarray:
    """Pairs with ``0 < |i - j| <= window`` closer than each radius."""
    out = np.zeros(radii.size, dtype=np.int64)
    for lag in range(1, min(window, len(x) - 1) + 1):
        d = np.sqrt(np.sum((x[lag:] - x[:-lag]) ** 2, axis=1))
        d.sort()
        out += np.searchsorted(d, radii, side="right")
    return out


def correlation_integral(traj, theiler: int = 100, n_radii: int = 24, percentiles=(0.1, 5.0),
                         max_points: int = 6000, n_sample_pairs: int = 200_000,
                         seed: int = 0) -> CorrelationIntegral:
    """Correlation sum over log-spaced radii and its scaling exponent.

    Radii span the given percentiles of the pairwise-distance distribution
    (estimated from randomly sampled pairs outside the Theiler window).  Pair
    counts within that window are subtracted exactly.  Long inputs are thinned
    to ``max_points`` by a fixed stride; the window is rescaled accordingly.
    """
    x = _values(traj).astype(float)
    if len(x) > max_points:
        stride = int(math.ceil(len(x) / max_points))
        x = x[::stride]
        theiler = int(math.ceil(theiler / stride))
    n = len(x)
    if n < 10:
        raise DimensionUndefinedError("too few points")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, n_sample_pairs)
    j = rng.integers(0, n, n_sample_pairs)
    keep = np.abs(i - j) > theiler
    d = np.sqrt(np.sum((x[i[keep]] - x[j[keep]]) ** 2, axis=1))
    d = d[d > 0]
    if d.size == 0:
        raise DimensionUndefinedError("all sampled distances are zero")
    lo, hi = np.percentile(d, percentiles)
    if not hi > lo > 0:
        raise DimensionUndefinedError("degenerate distance distribution")
    radii = np.geomspace(lo, hi, n_radii)
    tree = cKDTree(x)
    total = tree.count_neighbors(tree, radii).astype(np.int64)
    counts = (total - n) // 2 - _theiler_counts(x, radii, theiler)
    w = min(theiler, n - 1)
    n_pairs = n * (n - 1) // 2 - (w * n - w * (w + 1) // 2)
    ok = counts > 0
    if ok.sum() < 5:
        raise DimensionUndefinedError(f"only {int(ok.sum())} usable radii in the scaling region")
    lr, lc = np.log(radii[ok]), np.log(counts[ok] / n_pairs)
    slope = float(np.polyfit(lr, lc, 1)[0])
    local = np.diff(lc) / np.diff(lr)
    variation = float((local.max() - local.min()) / abs(slope)) if slope != 0 else math.inf
    return CorrelationIntegral(radii, counts, int(n_pairs), slope, local, variation)


def correlation_dimension(traj, theiler: int = 100, n_radii: int = 24, **kwargs) -> float:
    """Grassberger-Procaccia correlation dimension."""
    ci = correlation_integral(traj, theiler=theiler, n_radii=n_radii, **kwargs)
    if ci.flagged:
        warnings.warn(f"local slope varies by {ci.slope_variation:.0%} across the scaling region",
                      ScalingRegionWarning, stacklevel=2)
    return ci.dimension


# ---------------------------------------------------------------------------
# multivariate multiscale sample entropy


def coarse_grain(x: np.ndarray, scale: int) -> np.ndarray:
    """Means over non-overlapping windows of ``scale`` samples."""
    n = len(x) // scale
    return x[: n * scale].reshape(n, scale, -1).mean(axis=1)


def _pairs_within(v: np.ndarray, r: float) -> int:
    tree = cKDTree(v)
    return (int(tree.count_neighbors(tree, r, p=np.inf)) - len(v)) // 2


def multivariate_sample_entropy(x: np.ndarray, r: float, m: int = 2) -> float:
    """Multivariate sample entropy with embedding ``m`` per channel and lag 1.

    Composite delay vectors of length ``m`` in every channel are compared under
    the maximum norm.  The ``m + 1`` stage extends one channel at a time and
    pools all extended vectors before counting matches.  Pairs built from the
    same template index share their base exactly and are excluded, like
    self-matches in ordinary sample entropy.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    rows = n - m
    if rows < 2:
        return math.inf
    base = np.concatenate([np.stack([x[k : k + rows, c] for k in range(m)], axis=1) for c in range(p)], axis=1)
    ext = np.concatenate([np.concatenate([base, x[m : m + rows, c : c + 1]], axis=1) for c in range(p)], axis=0)
    b = _pairs_within(base, r) / (rows * (rows - 1) / 2)
    tail = x[m : m + rows]
    same = sum(int(np.sum(np.abs(tail[:, c] - tail[:, e]) <= r)) for c in range(p) for e in range(c + 1, p))
    total = p * rows
    valid = total * (total - 1) // 2 - rows * p * (p - 1) // 2
    a = (_pairs_within(ext, r) - same) / valid
    if b == 0 or a == 0:
        return math.inf
    return float(-math.log(a / b))


def multiscale_entropy_profile(traj, max_scale: int = 5, m: int = 2, tolerance: float = 0.15,
                               max_points: int = 3000) -> np.ndarray:
    """Sample entropy at scales ``1..max_scale``.

    Channels are z-scored; the tolerance is ``tolerance`` times the square
    root of the total variance and is held fixed across scales.
    """
    if max_scale < 1:
        raise ValueError("max_scale must be at least 1")
    x = _values(traj).astype(float)[:max_points]
    sd = x.std(axis=0)
    z = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    r = tolerance * math.sqrt(float(np.sum(z.var(axis=0))))
    out = np.array([multivariate_sample_entropy(coarse_grain(z, s), r, m) for s in range(1, max_scale + 1)])
    if np.any(np.isinf(out)):
        warnings.warn("no template matches at some scale; entropy is infinite", EntropyUndefinedWarning,
                      stacklevel=2)
    return out


def multiscale_entropy(traj, max_scale: int = 5, **kwargs) -> float:
    """Mean multivariate sample entropy across scales ``1..max_scale``."""
    return float(np.mean(multiscale_entropy_profile(traj, max_scale, **kwargs)))


# ---------------------------------------------------------------------------
# per-system bundle


@dataclass
class InvariantSet:
    system: str
    lyapunov_spectrum: list
    lyapunov_max: float
    corr_dim: float
    ky_dim: float
    mse: float
    t_peak: float = float("nan")
    ergodicity_warning: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "InvariantSet":
        return cls(**json.loads(text))


def compute_invariants(spec: SystemSpec, seed: int = 0, n_traj: int = 20, n_steps: int = 5000,
                       n_points: int = 10000, check_ergodicity: bool = False) -> InvariantSet:
    """All invariants of one system from its equations and a sampled trajectory.

    The spectrum comes from the long QR ensemble.  Dimension and entropy use a
    trajectory at the system's sampling step (nominally 100 points per
    dominant period).
    """
    est = ensemble_lyapunov_estimate(spec, "long", "qr", n_traj=n_traj, n_steps=n_steps, seed=seed)
    flagged = False
    if check_ergodicity:
        short = ensemble_lyapunov_estimate(spec, "short", "qr", seed=seed + 1)
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            flagged = not ergodicity_check(est, short)
    x0 = attractor_ensemble(spec, 1, seed + 7)
    x0 = x0[:, 0] if spec.is_delay else x0[0]
    sample_dt = spec.period / 100.0
    sub = max(int(round(sample_dt / spec.dt)), 1)
    states = integrate_states(spec, x0, spec.dt, n_points * sub)[::sub]
    states = states.reshape(len(states), spec.dim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ScalingRegionWarning)
        d2 = correlation_dimension(states)
    spectrum = [float(v) for v in est.spectrum]
    return InvariantSet(spec.name, spectrum, spectrum[0], d2, kaplan_yorke(est.spectrum),
                        multiscale_entropy(states), spec.period, flagged)
