"""Cross-model and cross-system statistics over benchmark records.

Panels hold errors ``eps[i, k, t]`` for model ``i``, system ``k`` and horizon
``t``.  Systems are ranked per model and horizon, and the rank variables feed
Spearman-style correlation matrices between models and between model errors
and the largest Lyapunov exponent.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal, stats
from scipy.spatial import cKDTree

from .alignment import EmptySpectrumError
from .dynamics import Trajectory
from .invariants import DimensionUndefinedError, correlation_dimension
from .models import model_group


class UndefinedCorrelationWarning(UserWarning):
    """A model's ranks have no variance, so its correlations are undefined."""


# ---------------------------------------------------------------------------
# rank panels


@dataclass
class RankPanel:
    errors: np.ndarray  # (models, systems, horizons)
    models: list
    systems: list
    horizons: np.ndarray  # in Lyapunov times
    ranks: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        e = np.asarray(self.errors, dtype=float)
        if e.ndim == 2:
            e = e[:, :, None]
        if e.shape[:2] != (len(self.models), len(self.systems)):
            raise ValueError("errors must have shape (models, systems, horizons)")
        self.errors = e
        self.horizons = np.atleast_1d(np.asarray(self.horizons, dtype=float))
        if self.horizons.size != e.shape[2]:
            raise ValueError("one horizon per error column")
        # missing errors rank last
        filled = np.where(np.isnan(e), np.inf, e)
        self.ranks = stats.rankdata(filled, axis=1)

    def horizon_index(self, t: float) -> int:
        return int(np.argmin(np.abs(self.horizons - t)))


def _centered_corr(a: np.ndarray) -> np.ndarray:
    """Pearson correlation between rows of ``a``; NaN rows for zero variance."""
    c = a - a.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.sum(c * c, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        u = c / norm[:, None]
    out = u @ u.T
    bad = norm == 0
    out[bad, :] = np.nan
    out[:, bad] = np.nan
    return out


def rank_correlation_matrix(panel: RankPanel, t: float) -> np.ndarray:
    """Spearman correlations between models over the systems at horizon ``t``."""
    if len(panel.systems) < 3:
        raise ValueError("need at least 3 systems")
    r = panel.ranks[:, :, panel.horizon_index(t)]
    c = _centered_corr(r)
    idx = np.arange(len(c))
    defined = ~np.isnan(c[idx, idx])
    c[idx[defined], idx[defined]] = 1.0
    if not defined.all():
        names = [panel.models[i] for i in np.nonzero(~defined)[0]]
        warnings.warn(f"constant system ranking for {names}", UndefinedCorrelationWarning, stacklevel=2)
    return c


def mutual_correlation(panel: RankPanel, t: float) -> np.ndarray:
    """Row sums of the rank correlation matrix."""
    return np.sum(rank_correlation_matrix(panel, t), axis=1)


@dataclass
class BootstrapCorrelation:
    rho: float
    ci_lo: float
    ci_hi: float
    n: int


def _spearman(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ra, rb = stats.rankdata(a), stats.rankdata(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        return math.nan
    return float(np.corrcoef(ra, rb)[0, 1])


def bootstrap_spearman(a, b, n_bootstrap: int = 500, seed: int = 0, level: float = 0.95) -> BootstrapCorrelation:
    """Spearman correlation with a percentile interval from resampled pairs."""
    if n_bootstrap < 100:
        raise ValueError("n_bootstrap must be at least 100")
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    n = len(a)
    if n < 3:
        raise ValueError("need at least 3 pairs")
    rho = _spearman(a, b)
    rng = np.random.default_rng(seed)
    draws = np.array([_spearman(a[i], b[i]) for i in rng.integers(0, n, (n_bootstrap, n))])
    draws = draws[~np.isnan(draws)]
    if draws.size == 0:
        return BootstrapCorrelation(rho, math.nan, math.nan, n)
    q = (1 - level) / 2
    return BootstrapCorrelation(rho, float(np.quantile(draws, q)), float(np.quantile(draws, 1 - q)), n)


def correlate_with_lyapunov(panel: RankPanel, lyapunov, t: float, n_bootstrap: int = 500,
                            seed: int = 0) -> BootstrapCorrelation:
    """Spearman correlation across systems between error at ``t`` and ``lyapunov_max``.

    Each system's error is its rank averaged over models, so models with
    larger error scales do not dominate.
    """
    lyapunov = np.asarray(lyapunov, dtype=float)
    if lyapunov.size != len(panel.systems):
        raise ValueError("one exponent per system")
    if len(panel.systems) < 3:
        raise ValueError("need at least 3 systems")
    mean_rank = panel.ranks[:, :, panel.horizon_index(t)].mean(axis=0)
    return bootstrap_spearman(mean_rank, lyapunov, n_bootstrap, seed)


# ---------------------------------------------------------------------------
# invariant recovery


def log_spectrum(values: np.ndarray, segment: int = 512) -> np.ndarray:
    """Per-coordinate Welch log power normalised to unit total power: ``(D, bins)``.

    Segment averaging keeps the per-bin scatter small enough that two
    stretches of the same attractor land close together.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 16:
        raise ValueError("need at least 16 samples for a spectrum")
    nper = min(segment, len(values) // 4)
    out = []
    for y in values.T:
        y = y - y.mean()
        if not np.any(np.abs(y) > 1e-12 * max(1.0, float(np.max(np.abs(y))))):
            raise EmptySpectrumError("constant coordinate")
        p = signal.welch(y, nperseg=nper)[1][1:]
        out.append(np.log(p / p.sum() + 1e-300))
    return np.array(out)


def spectrum_distance(truth: np.ndarray, forecast: np.ndarray) -> float:
    """RMSE between normalised log spectra on the truth's frequency grid."""
    a, b = log_spectrum(truth), log_spectrum(forecast)
    if a.shape != b.shape:
        fa = np.linspace(0, 1, a.shape[1])
        fb = np.linspace(0, 1, b.shape[1])
        b = np.array([np.interp(fa, fb, row) for row in b])
    return float(np.sqrt(np.mean((a - b) ** 2)))


def local_linear_lyapunov(traj, dt: float | None = None, tau: int = 5, k: int = 20, theiler: int = 50):
    """Lyapunov spectrum from data via neighbourhood tangent maps.

    Around each point a linear map carrying its ``k`` nearest neighbours'
    displacements ``tau`` samples forward is fitted by least squares; the maps
    are chained with QR re-orthonormalisation.  Chains starting at each of
    the ``tau`` offsets are averaged.
    """
    x = traj.values if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if dt is None:
        dt = traj.dt if isinstance(traj, Trajectory) else 1.0
    n, d = x.shape
    scale = x.std()
    if not scale > 0 or np.any(x.std(axis=0) < 1e-9 * scale):
        raise DimensionUndefinedError("degenerate trajectory has no tangent dynamics")
    x = (x - x.mean(axis=0)) / scale
    m = n - tau
    if m < 2 * theiler + k + 2 * tau:
        raise DimensionUndefinedError("trajectory too short for the neighbourhood estimator")
    _, idx = cKDTree(x[:m]).query(x[:m], k=min(k + 2 * theiler + 1, m))
    far = np.abs(idx - np.arange(m)[:, None]) > theiler
    order = np.argsort(~far, axis=1, kind="stable")[:, :k]
    nb = np.take_along_axis(idx, order, axis=1)
    if not np.take_along_axis(far, order, axis=1).all():
        raise DimensionUndefinedError("not enough neighbours outside the Theiler window")
    ref = np.arange(m)[:, None]
    dx = np.concatenate([x[nb] - x[ref], np.ones((m, k, 1))], axis=2)
    dy = x[nb + tau] - x[ref + tau]
    g = np.einsum("nki,nkj->nij", dx, dx) + 1e-10 * np.eye(d + 1)
    try:
        sol = np.linalg.solve(g, np.einsum("nki,nkj->nij", dx, dy))
    except np.linalg.LinAlgError as err:
        raise DimensionUndefinedError("singular neighbourhood") from err
    jac = np.swapaxes(sol[:, :d, :], 1, 2)
    total = np.zeros(d)
    for off in range(tau):
        q = np.eye(d)
        acc = np.zeros(d)
        steps = range(off, m, tau)
        for r in steps:
            q, rr = np.linalg.qr(jac[r] @ q)
            diag = np.diag(rr)
            if np.any(diag == 0):
                raise DimensionUndefinedError("singular tangent map")
            acc += np.log(np.abs(diag))
            q = q * np.sign(diag)
        total += acc / (len(steps) * tau * dt)
    return np.sort(total / tau)[::-1]


INVARIANTS = ("power_spectrum", "corr_dim", "lyapunov_spectrum", "lyapunov_max")


@dataclass
class InvariantRecovery:
    truth: dict
    predicted: dict
    error: dict
    undefined: dict
    partial: bool = False

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return [float(a) for a in v]
            return None if v is None else float(v)

        return {"truth": {k: clean(v) for k, v in self.truth.items()},
                "predicted": {k: clean(v) for k, v in self.predicted.items()},
                "error": {k: clean(v) for k, v in self.error.items()},
                "undefined": dict(self.undefined), "partial": self.partial}

    @classmethod
    def from_dict(cls, d: dict) -> "InvariantRecovery":
        return cls(d["truth"], d["predicted"], {k: (math.nan if v is None else v) for k, v in d["error"].items()},
                   d["undefined"], d["partial"])


def _compute(name: str, values: np.ndarray, dt: float):
    if name == "corr_dim":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return correlation_dimension(values, theiler=100, max_points=3000)
    spec = local_linear_lyapunov(values, dt)
    return spec if name == "lyapunov_spectrum" else float(spec[0])


def invariant_recovery(truth, forecast, dt: float | None = None, min_points: int = 2000) -> InvariantRecovery:
    """Absolute errors between invariants of the truth and of the forecast.

    Each invariant is computed the same way on both series.  Invariants that
    cannot be computed on the forecast (constant or degenerate output) are
    flagged undefined with the reason.
    """
    y = truth.values if isinstance(truth, Trajectory) else np.asarray(truth, dtype=float)
    f = forecast.values if isinstance(forecast, Trajectory) else np.asarray(forecast, dtype=float)
    if dt is None:
        dt = truth.dt if isinstance(truth, Trajectory) else 1.0
    partial = min(len(y), len(f)) < min_points
    t_val, p_val, err, undef = {}, {}, {}, {}
    try:
        err["power_spectrum"] = spectrum_distance(y, f)
        t_val["power_spectrum"] = p_val["power_spectrum"] = None
    except (EmptySpectrumError, ValueError) as e:
        err["power_spectrum"] = math.nan
        undef["power_spectrum"] = str(e)
    pairs = {}
    for key in ("corr_dim", "lyap"):
        try:
            if key == "corr_dim":
                pairs[key] = (_compute(key, y, dt), _compute(key, f, dt))
            else:
                pairs[key] = (local_linear_lyapunov(y, dt), local_linear_lyapunov(f, dt))
        except (DimensionUndefinedError, ValueError, np.linalg.LinAlgError) as e:
            pairs[key] = str(e) or type(e).__name__
    for name in ("corr_dim", "lyapunov_spectrum", "lyapunov_max"):
        pair = pairs["corr_dim" if name == "corr_dim" else "lyap"]
        if isinstance(pair, str):
            t_val[name] = p_val[name] = None
            err[name] = math.nan
            undef[name] = pair
            continue
        a, b = pair
        if name == "lyapunov_max":
            a, b = float(a[0]), float(b[0])
        t_val[name], p_val[name] = a, b
        err[name] = float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))
    return InvariantRecovery(t_val, p_val, err, undef, partial)


# ---------------------------------------------------------------------------
# record-level summaries


def _get(rec, name):
    return rec[name] if isinstance(rec, dict) else getattr(rec, name)


@dataclass
class WalltimeCorrelation:
    overall: BootstrapCorrelation
    groups: dict


def error_vs_walltime(records, n_bootstrap: int = 500, seed: int = 0, metric: str = "sMAPE") -> WalltimeCorrelation:
    """Spearman correlation between error at one Lyapunov time and fit walltime.

    Computed over all records and within each model group; groups with fewer
    than three records or constant walltimes are reported as NaN.
    """
    records = list(records)
    if len(records) < 10:
        raise ValueError("need at least 10 records")
    err = np.array([_get(r, "score")(metric) if not isinstance(r, dict) else r[f"{metric}_1lt"] for r in records])
    wall = np.array([_get(r, "train_walltime_seconds") for r in records], dtype=float)
    if np.ptp(wall) == 0:
        raise ValueError("walltimes are all equal; correlation undefined")
    overall = bootstrap_spearman(wall, err, n_bootstrap, seed)
    groups = {}
    kinds = np.array([model_group_of(_get(r, "model")) for r in records])
    for g in sorted(set(kinds)):
        m = kinds == g
        if m.sum() >= 3 and np.ptp(wall[m]) > 0:
            groups[g] = bootstrap_spearman(wall[m], err[m], n_bootstrap, seed)
        else:
            groups[g] = BootstrapCorrelation(math.nan, math.nan, math.nan, int(m.sum()))
    return WalltimeCorrelation(overall, groups)


def model_group_of(name) -> str:
    from .models import ModelKind

    return model_group(ModelKind.parse(name))


def horizon_statistics(records, metric: str = "sMAPE") -> dict:
    """Mean and std over systems of the best model's prediction horizons.

    The best model per system has the lowest median error at one Lyapunov
    time; its horizons are averaged over seeds.  All values are in Lyapunov
    times.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    by_sys: dict = {}
    for r in records:
        by_sys.setdefault(_get(r, "system"), {}).setdefault(str(_get(r, "model")), []).append(r)
    rows = []
    for system in sorted(by_sys):
        models = by_sys[system]

        def med(rs):
            return float(np.median([_score(r, metric) for r in rs]))

        best = min(sorted(models), key=lambda m: med(models[m]))
        rs = models[best]
        rows.append({"system": system, "model": best, metric: med(rs),
                     "valid_prediction_time": float(np.mean([_get(r, "valid_prediction_time") for r in rs])),
                     "error_doubling_time": float(np.mean([_get(r, "error_doubling_time") for r in rs]))})
    vpt = np.array([r["valid_prediction_time"] for r in rows])
    dbl = np.array([r["error_doubling_time"] for r in rows])
    return {"valid_prediction_time": (float(vpt.mean()), float(vpt.std())),
            "error_doubling_time": (float(dbl.mean()), float(dbl.std())), "per_system": rows}


def _score(rec, metric: str) -> float:
    if isinstance(rec, dict):
        return float(rec[f"{metric}_1lt"])
    return rec.score(metric)


def build_panel(records, metric: str = "sMAPE", horizons=None) -> RankPanel:
    """Seed-median error curves on a shared Lyapunov-time grid."""
    horizons = np.geomspace(0.05, 10.0, 40) if horizons is None else np.asarray(horizons, dtype=float)
    records = [r for r in records if r.error_curves.get(metric) is not None]
    models = sorted({str(r.model) for r in records})
    systems = sorted({r.system for r in records})
    cube = np.full((len(models), len(systems), horizons.size), np.nan)
    for i, m in enumerate(models):
        for k, s in enumerate(systems):
            rows = []
            for r in records:
                if str(r.model) == m and r.system == s:
                    rows.append(r.curve_on(metric, horizons))
            if rows:
                cube[i, k] = np.nanmedian(np.array(rows), axis=0) if not np.all(np.isnan(rows)) else np.nan
    return RankPanel(cube, models, systems, horizons)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def analyze(out_dir, n_bootstrap: int = 500, seed: int = 0) -> dict:
    """Write the analysis tables for a campaign directory and return a summary."""
    from .harness import load_records

    out_dir = Path(out_dir)
    records = [r for r in load_records(out_dir) if r.error is None]
    if not records:
        raise ValueError(f"no successful records in {out_dir}")
    panel = build_panel(records)
    lyap = {}
    for r in records:
        lyap[r.system] = r.lyapunov_max
    rows_rank, rows_lyap, rows_mutual = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedCorrelationWarning)
        for t in panel.horizons:
            if len(panel.systems) < 3:
                break
            c = rank_correlation_matrix(panel, t)
            for i, a in enumerate(panel.models):
                rows_mutual.append([a, t, float(np.sum(c[i]))])
                for j, b in enumerate(panel.models):
                    rows_rank.append([a, b, t, float(c[i, j])])
            bc = correlate_with_lyapunov(panel, [lyap[s] for s in panel.systems], t, n_bootstrap, seed)
            rows_lyap.append([t, bc.rho, bc.ci_lo, bc.ci_hi])
    _write_csv(out_dir / "rank_corr.csv", ["model_i", "model_j", "horizon", "value"], rows_rank)
    _write_csv(out_dir / "mutual_corr.csv", ["model", "horizon", "value"], rows_mutual)
    _write_csv(out_dir / "lyap_corr.csv", ["horizon", "rho", "ci_lo", "ci_hi"], rows_lyap)
    _write_csv(out_dir / "panel.csv", ["model", "system", "horizon", "sMAPE", "rank"],
               [[m, s, t, panel.errors[i, k, h], panel.ranks[i, k, h]] for i, m in enumerate(panel.models)
                for k, s in enumerate(panel.systems) for h, t in enumerate(panel.horizons)])
    inv_rows = []
    for r in records:
        if r.invariant_recovery:
            for name in INVARIANTS:
                e = r.invariant_recovery.error.get(name, math.nan)
                inv_rows.append([r.system, str(r.model), r.seed, name, e, int(name in r.invariant_recovery.undefined)])
    _write_csv(out_dir / "invariant_recovery.csv", ["system", "model", "seed", "invariant", "error", "undefined"],
               inv_rows)
    hs = horizon_statistics(records)
    _write_csv(out_dir / "horizons.csv", ["system", "model", "sMAPE_1lt", "valid_prediction_time",
                                           "error_doubling_time"],
               [[r["system"], r["model"], r["sMAPE"], r["valid_prediction_time"], r["error_doubling_time"]]
                for r in hs["per_system"]])
    summary = {"n_records": len(records), "horizons": {k: hs[k] for k in ("valid_prediction_time",
                                                                          "error_doubling_time")}}
    if len(records) >= 10:
        try:
            wt = error_vs_walltime(records, n_bootstrap, seed)
            summary["walltime"] = {"overall": wt.overall.__dict__, "groups": {g: v.__dict__ for g, v in
                                                                              wt.groups.items()}}
            _write_csv(out_dir / "error_walltime.csv", ["group", "rho", "ci_lo", "ci_hi", "n"],
                       [["all", wt.overall.rho, wt.overall.ci_lo, wt.overall.ci_hi, wt.overall.n]]
                       + [[g, v.rho, v.ci_lo, v.ci_hi, v.n] for g, v in wt.groups.items()])
        except ValueError as e:
            summary["walltime"] = {"undefined": str(e)}
    (out_dir / "analysis.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary
