"""Timescale alignment from surrogate-tested power spectra.

Each system's dominant period ``t_peak`` is the period of the strongest
frequency whose periodogram power beats phase-randomised surrogates.
Trajectories are then delivered at 100 samples per ``t_peak``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import SystemSpec, Trajectory, attractor_ensemble, integrate_states

GRANULARITY = 100
PILOT_POINTS = 2**13


class EmptySpectrumError(ValueError):
    """The series has no variance, so its spectrum is empty."""


class AlignmentError(RuntimeError):
    """No significant frequency was found for a system."""


class UpsamplingError(ValueError):
    """Resampling would need a finer spacing than the source provides."""


def _hann_periodogram(x: np.ndarray) -> np.ndarray:
    w = np.hanning(len(x))
    return np.abs(np.fft.rfft(x * w)) ** 2 / np.sum(w * w)


def _centered(series) -> np.ndarray:
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 16:
        raise ValueError("series must have at least 16 points")
    x = x - x.mean()
    if not np.any(np.abs(x) > 1e-12 * max(1.0, float(np.max(np.abs(series))))):
        raise EmptySpectrumError("constant series has an empty spectrum")
    return x


def power_spectrum(series, dt: float = 1.0):
    """One-sided Hann-windowed periodogram of the mean-removed series.

    Returns ``(frequencies, power)`` without the zero-frequency bin;
    frequencies are in cycles per time unit.
    """
    x = _centered(series)
    freqs = np.fft.rfftfreq(x.size, dt)
    return freqs[1:], _hann_periodogram(x)[1:]


def phase_surrogate(series, rng: np.random.Generator) -> np.ndarray:
    """Same Fourier amplitudes and mean, independent uniform phases.

    The zero-frequency bin (and the Nyquist bin for even lengths) keep their
    values so the inverse transform is real with the original mean.
    """
    x = np.asarray(series, dtype=float).ravel()
    spec = np.fft.rfft(x)
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.size)
    out = np.abs(spec) * np.exp(1j * phases)
    out[0] = spec[0]
    if x.size % 2 == 0:
        out[-1] = spec[-1]
    return np.fft.irfft(out, n=x.size)


def _band_pool(values: np.ndarray, band: int) -> np.ndarray:
    """For each bin, all surrogate values within ``band`` bins: ``(bins, n * (2 band + 1))``."""
    pad = np.pad(values, ((0, 0), (band, band)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, 2 * band + 1, axis=1)
    return win.transpose(1, 0, 2).reshape(values.shape[1], -1)


def surrogate_significant_frequencies(series, dt: float = 1.0, n_surrogates: int = 100, quantile: float = 0.95,
                                      seed: int = 0, band: int = 8, return_power: bool = False):
    """Frequencies whose power exceeds the surrogate quantile around them.

    Surrogates keep every raw Fourier amplitude, so at a single bin their power
    is (nearly) the original's by construction.  The null distribution for a
    bin therefore pools surrogate power over the ``band`` bins on either side;
    a bin is significant when it stands out from its spectral neighbourhood.
    ``band=0`` gives the strict per-bin comparison.
    """
    if n_surrogates < 20:
        raise ValueError("n_surrogates must be at least 20")
    if not 0.5 < quantile < 1:
        raise ValueError("quantile must lie in (0.5, 1)")
    x = _centered(series)
    freqs, power = power_spectrum(x, dt)
    rng = np.random.default_rng(seed)
    sur = np.empty((n_surrogates, power.size))
    for i in range(n_surrogates):
        sur[i] = _hann_periodogram(phase_surrogate(x, rng))[1:]
    thresh = np.quantile(_band_pool(sur, band), quantile, axis=1)
    keep = power > thresh
    if return_power:
        return freqs[keep], power[keep]
    return freqs[keep]


@dataclass
class AlignmentResult:
    system: str
    t_peak: float
    t_max: float
    dt_integration: float
    resample_factor: int
    significant_frequencies: list = field(default_factory=list)
    dt_coarse: float = float("nan")
    param_hash: str = ""
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.t_peak <= self.t_max:
            raise ValueError("t_peak must not exceed t_max")
        if not self.dt_integration > 0:
            raise ValueError("dt_integration must be positive")

    @property
    def sample_dt(self) -> float:
        """Spacing of delivered samples, ``t_peak / 100``."""
        return self.t_peak / GRANULARITY

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AlignmentResult":
        d = json.loads(text)
        d["significant_frequencies"] = [tuple(p) for p in d["significant_frequencies"]]
        return cls(**d)


def _pilot(spec: SystemSpec, seed: int, spacing: float, n_points: int) -> np.ndarray:
    sub = max(int(math.ceil(spacing / spec.dt - 1e-9)), 1)
    dt = spacing / sub
    x0 = attractor_ensemble(spec, 1, seed, dt=min(dt, spec.dt))
    x0 = x0[:, 0] if spec.is_delay else x0[0]
    states = integrate_states(spec, x0, dt, (n_points - 1) * sub)[::sub]
    return states.reshape(n_points, spec.dim)


def dominant_frequencies(values: np.ndarray, dt: float, coordinates=None, n_surrogates: int = 100,
                         quantile: float = 0.95, seed: int = 0, band: int = 8):
    """Significant frequencies and a dominance score for each.

    Significance is taken over the chosen coordinates (all by default): a bin
    counts if it is significant in any of them.  Dominance is the
    variance-preserving spectrum ``f * P(f)`` of each coordinate normalised to
    unit power, summed over coordinates and averaged over ``2 band + 1`` bins.
    Returns ``(frequencies, score)`` restricted to significant bins.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    cols = range(values.shape[1]) if coordinates is None else np.atleast_1d(coordinates)
    mask = None
    score = None
    for c in cols:
        y = values[:, int(c)]
        try:
            freqs, power = power_spectrum(y, dt)
        except EmptySpectrumError:
            continue
        sig = surrogate_significant_frequencies(y, dt, n_surrogates, quantile, seed + int(c), band)
        hit = np.isin(freqs, sig)
        w = freqs * power / power.sum()
        mask = hit if mask is None else mask | hit
        score = w if score is None else score + w
    if mask is None:
        raise EmptySpectrumError("all coordinates are constant")
    kernel = np.ones(2 * band + 1) / (2 * band + 1)
    smooth = np.convolve(np.pad(score, band, mode="edge"), kernel, mode="valid")
    return freqs[mask], smooth[mask]


def align_system(spec: SystemSpec, seed: int = 0, n_points: int = PILOT_POINTS, n_surrogates: int = 100,
                 quantile: float = 0.95, coordinates=None, band: int = 8) -> AlignmentResult:
    """Dominant and longest significant periods, and the integration step.

    A first pilot sampled at a twentieth of the registry's rough period locates
    the spectral peak; a second pilot sampled at a twentieth of that peak
    period refines it.  The integration step divides ``t_peak / 100`` into
    ``resample_factor`` equal substeps no longer than the registry step.
    """
    spacing = spec.period / 20.0
    found = None
    for _ in range(2):
        values = _pilot(spec, seed, spacing, n_points)
        freqs, score = dominant_frequencies(values, spacing, coordinates, n_surrogates, quantile, seed, band)
        if freqs.size == 0:
            raise AlignmentError(f"{spec.name}: no significant frequencies")
        found = (1.0 / float(freqs[np.argmax(score)]), 1.0 / float(freqs.min()), freqs, score)
        spacing = found[0] / 20.0
    t_peak, t_max, freqs, score = found
    factor = max(int(math.ceil((t_peak / GRANULARITY) / spec.dt - 1e-9)), 1)
    dt_int = t_peak / GRANULARITY / factor
    sig = [(float(f), float(p)) for f, p in zip(freqs, score)]
    return AlignmentResult(spec.name, t_peak, t_max, dt_int, factor, sig, t_max / 10.0, spec.param_hash(), seed)


def resample(traj: Trajectory, alignment: AlignmentResult | float) -> Trajectory:
    """Linear-interpolation resampling to 100 points per ``t_peak``.

    ``alignment`` may be an ``AlignmentResult`` or a bare ``t_peak``.
    """
    t_peak = alignment.t_peak if isinstance(alignment, AlignmentResult) else float(alignment)
    target = t_peak / GRANULARITY
    if target < traj.dt * (1 - 1e-9):
        raise UpsamplingError(f"target spacing {target:g} is finer than source spacing {traj.dt:g}")
    span = (len(traj) - 1) * traj.dt
    n = int(math.floor(span / target * (1 + 1e-12))) + 1
    if abs(target - traj.dt) <= 1e-12 * traj.dt:
        values = traj.values.copy()
    else:
        t_src = np.arange(len(traj)) * traj.dt
        t_new = np.arange(n) * target
        values = np.stack([np.interp(t_new, t_src, traj.values[:, j]) for j in range(traj.dim)], axis=1)
    return Trajectory(values, target, traj.t0, traj.system_name, float(GRANULARITY), traj.seed)


# ---------------------------------------------------------------------------
# cache


def default_cache_path() -> Path:
    root = os.environ.get("CHAOSBENCH_CACHE")
    base = Path(root) if root else Path.home() / ".cache" / "chaosbench"
    return base / "alignment.json"


def cache_key(spec: SystemSpec) -> str:
    return f"{spec.name}:{spec.param_hash()}"


def load_cached(spec: SystemSpec, path: Path | None = None) -> AlignmentResult | None:
    path = default_cache_path() if path is None else Path(path)
    if not path.exists():
        return None
    entry = json.loads(path.read_text()).get(cache_key(spec))
    return None if entry is None else AlignmentResult.from_json(json.dumps(entry))


def store_cached(spec: SystemSpec, result: AlignmentResult, path: Path | None = None) -> None:
    path = default_cache_path() if path is None else Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = json.loads(path.read_text()) if path.exists() else {}
    data[cache_key(spec)] = asdict(result)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True))
    os.replace(tmp, path)


def aligned(spec: SystemSpec, seed: int = 0, path: Path | None = None) -> AlignmentResult:
    """Cached ``align_system``."""
    hit = load_cached(spec, path)
    if hit is not None:
        return hit
    result = align_system(spec, seed)
    store_cached(spec, result, path)
    return result
