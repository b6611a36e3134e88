"""Benchmark orchestration: splits, tuning, fitting, rollout, timing, storage.

A campaign runs every (system, model, seed) triple.  Each finished triple is
written atomically as one JSON blob, so an interrupted campaign resumes by
skipping triples whose blob exists.  Tables are rebuilt from the blobs in
sorted order, which makes them independent of execution order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import InvariantRecovery, invariant_recovery
from .dynamics import DivergenceError, SystemSpec, Trajectory, integrate_states, sample_attractor
from .metrics import (ErrorCurve, MetricKind, error_curve, error_doubling_time, evaluate, horizon_grid,
                      valid_prediction_time)
from .models import HistoryTooShortError, HyperGrid, ModelKind, make_model
from .systems import get_system

WORKERS_ENV = "CHAOSBENCH_WORKERS"


@dataclass(frozen=True)
class ExperimentConfig:
    train_periods: int = 10
    val_periods: int = 2
    test_horizon_periods: int = 50
    granularity: int = 100
    hyper_grid: HyperGrid = field(default_factory=HyperGrid)
    seeds: tuple = (0, 1, 2, 3, 4)
    metric_for_tuning: MetricKind = MetricKind.sMAPE
    metrics: tuple = tuple(MetricKind)
    invariants: bool = True

    def __post_init__(self) -> None:
        if self.train_periods < self.val_periods:
            raise ValueError("train_periods must be at least val_periods")
        if min(self.train_periods, self.val_periods, self.test_horizon_periods, self.granularity) <= 0:
            raise ValueError("periods and granularity must be positive")
        object.__setattr__(self, "metric_for_tuning", MetricKind.parse(self.metric_for_tuning))
        object.__setattr__(self, "metrics", tuple(MetricKind.parse(m) for m in self.metrics))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if MetricKind.sMAPE not in self.metrics:
            object.__setattr__(self, "metrics", (MetricKind.sMAPE,) + self.metrics)

    @property
    def train_points(self) -> int:
        return self.train_periods * self.granularity

    @property
    def val_points(self) -> int:
        return self.val_periods * self.granularity

    @property
    def test_points(self) -> int:
        return self.test_horizon_periods * self.granularity

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metric_for_tuning"] = self.metric_for_tuning.value
        d["metrics"] = [m.value for m in self.metrics]
        d["hyper_grid"] = {k: list(v) for k, v in d["hyper_grid"].items()}
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "hyper_grid" in d:
            d["hyper_grid"] = HyperGrid(**{k: tuple(v) for k, v in d["hyper_grid"].items()})
        for key in ("seeds", "metrics"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# data


def _seed_pair(seed: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence([int(seed), 7919]).generate_state(2)
    return int(a), int(b)


def _sampled(spec: SystemSpec, x0, n_points: int, sample_dt: float, seed: int) -> Trajectory:
    factor = max(int(round(sample_dt / spec.dt)), 1)
    if abs(factor * spec.dt - sample_dt) <= 1e-9 * sample_dt:
        states = integrate_states(spec, x0, spec.dt, (n_points - 1) * factor)
        values = states.reshape(-1, spec.dim)[::factor]
    else:
        n_steps = int(math.ceil((n_points - 1) * sample_dt / spec.dt))
        states = integrate_states(spec, x0, spec.dt, n_steps).reshape(-1, spec.dim)
        t_src = np.arange(len(states)) * spec.dt
        t_new = np.arange(n_points) * sample_dt
        values = np.stack([np.interp(t_new, t_src, states[:, j]) for j in range(spec.dim)], axis=1)
    return Trajectory(values[:n_points], sample_dt, 0.0, spec.name, None, seed)


def generate_split(spec: SystemSpec, config: ExperimentConfig | None = None, seed: int = 0):
    """Train and test trajectories from two independent attractor states.

    Train holds ``t*`` plus the validation window; test holds ``t*`` plus
    the forecast horizon.  Both are sampled at ``granularity`` points per
    dominant period.
    """
    config = ExperimentConfig() if config is None else config
    key = (spec.name, spec.param_hash(), spec.dt, spec.period, tuple(spec.default_state), config.train_points,
           config.val_points, config.test_points, config.granularity, int(seed))
    if key in _SPLITS:
        return tuple(Trajectory(t.values.copy(), t.dt, t.t0, t.system_name, t.granularity, t.seed)
                     for t in _SPLITS[key])
    sample_dt = spec.period / config.granularity
    if sample_dt < spec.dt * (1 - 1e-9):
        raise ValueError(f"{spec.name}: integration step {spec.dt:g} exceeds sample spacing {sample_dt:g}")
    s_train, s_test = _seed_pair(seed)
    out = []
    for s, n in ((s_train, config.train_points + config.val_points), (s_test, config.train_points + config.test_points)):
        x0 = sample_attractor(spec, s)
        traj = _sampled(spec, x0, n, sample_dt, seed)
        traj.granularity = float(config.granularity)
        out.append(traj)
    if len(_SPLITS) >= 8:
        _SPLITS.pop(next(iter(_SPLITS)))
    _SPLITS[key] = tuple(out)
    return generate_split(spec, config, seed)


_SPLITS: dict = {}


# ---------------------------------------------------------------------------
# tuning


@dataclass
class TuneResult:
    value: float
    scores: dict
    failed: bool = False


def _forecast_score(model, history: np.ndarray, future: np.ndarray, metric: MetricKind) -> float:
    fc = model.predict(history, len(future))
    if fc.diverged:
        return math.inf
    return float(evaluate(metric, future, fc.values))


def tune(kind, spec: SystemSpec | None, train, config: ExperimentConfig | None = None, seed: int = 0,
         train_points: int | None = None) -> TuneResult:
    """Grid search on one rolling-origin split of the training trajectory.

    Each grid value is fitted on the first ``t*`` points and scored on the
    following validation window.  Ties go to the smaller value.  When no
    value produces a finite score the grid minimum is returned, flagged.
    """
    config = ExperimentConfig() if config is None else config
    kind = ModelKind.parse(kind)
    v = train.values if isinstance(train, Trajectory) else np.asarray(train, dtype=float)
    n_fit = config.train_points if train_points is None else train_points
    history, future = v[:n_fit], v[n_fit : n_fit + config.val_points]
    if len(future) == 0:
        raise ValueError("training trajectory has no validation window")
    grid = config.hyper_grid.values(kind)
    scores, usable = {}, 0
    best, best_score = grid[0], math.inf
    for value in grid:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = make_model(kind, value, v.shape[1], seed, config.hyper_grid)
        if len(history) < model.min_history:
            continue
        usable += 1
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                model.fit(history)
            score = _forecast_score(model, history, future, config.metric_for_tuning)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            score = math.inf
        scores[value] = score
        if score < best_score and not (math.isfinite(best_score) and math.isclose(score, best_score, rel_tol=1e-12)):
            best, best_score = value, score
    if usable == 0:
        raise HistoryTooShortError(f"{kind.value}: no grid value fits {len(history)} history points")
    failed = not math.isfinite(best_score)
    if failed:
        best = min(v for v in grid if v in scores)
    return TuneResult(best, scores, failed)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class BenchmarkRecord:
    system: str
    model: str
    seed: int
    tuned_hyper: float | None = None
    tuning_failed: bool = False
    tune_scores: dict = field(default_factory=dict)
    error_curves: dict = field(default_factory=dict)
    invariant_recovery: InvariantRecovery | None = None
    train_walltime_seconds: float = math.nan
    divergence_flag: bool = False
    valid_length: int = 0
    horizon: int = 0
    lyapunov_max: float = math.nan
    sample_dt: float = math.nan
    valid_prediction_time: float = math.nan
    error_doubling_time: float = math.nan
    doubling_censored: bool = False
    model_flags: dict = field(default_factory=dict)
    error: str | None = None

    def score(self, metric: str = "sMAPE", lt: float = 1.0) -> float:
        """Error at ``lt`` Lyapunov times; horizons past divergence get the metric's worst value."""
        c = self.error_curves[MetricKind.parse(metric).value]
        k = int(np.argmin(np.abs(c.lyapunov_horizons - lt)))
        if c.divergent[k]:
            kind = MetricKind.parse(metric)
            return kind.range[0] if kind.higher_is_better else kind.range[1]
        return float(c.values[k])

    def curve_on(self, metric: str, horizons) -> np.ndarray:
        """Curve interpolated (log-time) to the given Lyapunov horizons; worst value past divergence."""
        c = self.error_curves[MetricKind.parse(metric).value]
        kind = MetricKind.parse(metric)
        worst = kind.range[0] if kind.higher_is_better else kind.range[1]
        vals = np.where(c.divergent, worst, c.values)
        lh = c.lyapunov_horizons
        ok = np.isfinite(vals)
        if ok.sum() < 2:
            return np.full(len(horizons), np.nan)
        return np.interp(np.log(horizons), np.log(lh[ok]), vals[ok])

    # serialisation
    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("error_curves", "invariant_recovery")}
        d["tune_scores"] = {repr(float(k)): (None if not math.isfinite(v) else v) for k, v in self.tune_scores.items()}
        d["error_curves"] = {
            name: {"lengths": c.lengths.tolist(), "values": [None if np.isnan(v) else float(v) for v in c.values],
                   "divergent": c.divergent.astype(int).tolist()}
            for name, c in self.error_curves.items()
        }
        d["invariant_recovery"] = None if self.invariant_recovery is None else self.invariant_recovery.to_dict()
        for k in ("lyapunov_max", "sample_dt", "valid_prediction_time", "error_doubling_time",
                  "train_walltime_seconds"):
            d[k] = None if not math.isfinite(d[k]) else d[k]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkRecord":
        d = dict(d)
        curves = d.pop("error_curves")
        inv = d.pop("invariant_recovery")
        for k in ("lyapunov_max", "sample_dt", "valid_prediction_time", "error_doubling_time",
                  "train_walltime_seconds"):
            d[k] = math.nan if d.get(k) is None else d[k]
        d["tune_scores"] = {float(k): (math.inf if v is None else v) for k, v in d.get("tune_scores", {}).items()}
        rec = cls(**d)
        for name, c in curves.items():
            lengths = np.asarray(c["lengths"], dtype=int)
            vals = np.array([np.nan if v is None else v for v in c["values"]], dtype=float)
            div = np.asarray(c["divergent"], dtype=bool)
            rec.error_curves[name] = ErrorCurve(name, lengths, lengths * rec.sample_dt, vals, rec.lyapunov_max,
                                                np.isnan(vals) & ~div, div)
        rec.invariant_recovery = None if inv is None else InvariantRecovery.from_dict(inv)
        return rec

    def result_row(self) -> dict:
        ok = self.error is None and "sMAPE" in self.error_curves
        return {"system": self.system, "model": self.model, "seed": self.seed,
                "tuned_hyper": self.tuned_hyper, "tuning_failed": int(self.tuning_failed),
                "sMAPE_1lt": self.score("sMAPE") if ok else math.nan,
                "valid_prediction_time": self.valid_prediction_time,
                "error_doubling_time": self.error_doubling_time,
                "divergence_flag": int(self.divergence_flag), "valid_length": self.valid_length,
                "train_walltime_seconds": self.train_walltime_seconds, "error": self.error or ""}


def _timed_fit(model, history: np.ndarray) -> float:
    """Process time of ``fit`` on a single thread; repeats very short fits until measurable."""
    with threadpool_limits(limits=1):
        reps = 1
        while True:
            start = time.process_time_ns()
            for _ in range(reps):
                model.fit(history)
            elapsed = time.process_time_ns() - start
            if elapsed > 0:
                return elapsed / reps / 1e9
            reps *= 10
            if reps > 10**6:
                raise RuntimeError("process clock did not advance while fitting")


def _lookup(spec) -> SystemSpec:
    return get_system(spec) if isinstance(spec, str) else spec


def run_experiment(spec, kind, config: ExperimentConfig | None = None, seed: int = 0,
                   history_points: int | None = None) -> BenchmarkRecord:
    """Tune on train, refit on the test history, roll out and score.

    ``history_points`` truncates the fit history (ending at the same origin)
    for history-length titration.
    """
    config = ExperimentConfig() if config is None else config
    spec = _lookup(spec)
    kind = ModelKind.parse(kind)
    train, test = generate_split(spec, config, seed)
    n_hist = config.train_points if history_points is None else int(history_points)
    if not 0 < n_hist <= config.train_points:
        raise ValueError("history_points must lie in (0, t*]")
    start = config.train_points - n_hist
    tr = train.values[start:]
    tuned = tune(kind, spec, tr, config, seed, train_points=n_hist)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = make_model(kind, tuned.value, spec.dim, seed, config.hyper_grid)
    history = test.values[start : config.train_points]
    truth = test.values[config.train_points :]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        wall = _timed_fit(model, history)
    fc = model.predict(history, len(truth))
    valid = len(fc.values) if fc.diverged else len(truth)
    forecast = np.full_like(truth, np.nan)
    forecast[:valid] = fc.values[:valid]
    sample_dt = test.dt
    lam = spec.lyapunov_max
    sigma = float(np.std(history))
    lengths = horizon_grid(len(truth), sample_dt, lam)
    curves = {}
    for metric in config.metrics:
        curves[metric.value] = error_curve(metric, truth, np.where(np.isnan(forecast), 0.0, forecast), lam,
                                           sample_dt, lengths, sigma, valid)
    rec = BenchmarkRecord(spec.name, kind.value, seed, float(tuned.value), tuned.failed, tuned.scores, curves,
                          None, wall, fc.diverged, valid, len(truth),
                          math.nan if lam is None else float(lam), sample_dt, model_flags=dict(model.flags))
    if lam:
        rec.valid_prediction_time = valid_prediction_time(curves["sMAPE"])
        if valid >= 10:
            dbl = error_doubling_time(truth[:valid], forecast[:valid], lam, sample_dt,
                                      0.1 * config.granularity * sample_dt)
            rec.error_doubling_time, rec.doubling_censored = dbl.value, dbl.censored
    if config.invariants:
        if fc.diverged:
            rec.invariant_recovery = InvariantRecovery({}, {}, {}, {"all": "forecast diverged"}, True)
        else:
            rec.invariant_recovery = invariant_recovery(truth, forecast, sample_dt)
    return rec


# ---------------------------------------------------------------------------
# campaigns


def blob_name(system: str, model: str, seed: int) -> str:
    return f"{system}__{model}__{seed}.json"


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _run_triple(args) -> dict:
    spec, kind, config, seed = args
    name = spec if isinstance(spec, str) else spec.name
    try:
        rec = run_experiment(spec, kind, config, seed)
    except (DivergenceError, HistoryTooShortError, ValueError, np.linalg.LinAlgError) as err:
        rec = BenchmarkRecord(name, ModelKind.parse(kind).value, seed,
                              error=f"{type(err).__name__}: {err}")
    except Exception as err:  # noqa: BLE001 - campaigns record, never abort
        rec = BenchmarkRecord(name, ModelKind.parse(kind).value, seed,
                              error=f"{type(err).__name__}: {err}\n{traceback.format_exc(limit=3)}")
    return rec.to_dict()


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as err:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from err
    return max(n, 1)


def run_campaign(config: ExperimentConfig, systems, kinds, out_dir=None, workers: int | None = None,
                 limit: int | None = None) -> list[BenchmarkRecord]:
    """All (system, model, seed) triples, resumable through ``out_dir``.

    ``limit`` stops after that many new triples (used to simulate
    interruption).  Returns records sorted by (system, model, seed).
    """
    systems = [_lookup(s) for s in systems]
    kinds = [ModelKind.parse(k) for k in kinds]
    if not systems or not kinds or not config.seeds:
        raise ValueError("systems, models and seeds must be nonempty")
    workers = worker_count() if workers is None else workers
    blobs = None
    if out_dir is not None:
        blobs = Path(out_dir) / "records"
        blobs.mkdir(parents=True, exist_ok=True)
    triples = sorted(((s.name, k.value, seed) for s in systems for k in kinds for seed in config.seeds))
    by_name = {s.name: s for s in systems}
    done: dict = {}
    todo = []
    for t in triples:
        path = blobs / blob_name(*t) if blobs is not None else None
        if path is not None and path.exists():
            done[t] = json.loads(path.read_text())
        else:
            todo.append(t)
    # seeds outer, models inner: consecutive triples share a data split
    todo.sort(key=lambda t: (t[0], t[2], t[1]))
    if limit is not None:
        todo = todo[:limit]

    def store(t, d):
        done[t] = d
        if blobs is not None:
            _write_atomic(blobs / blob_name(*t), json.dumps(d, sort_keys=True))

    # pass names when the registry can rebuild the SystemSpec (keeps tasks picklable)
    def task(t):
        spec = by_name[t[0]]
        return (t[0] if _is_registry(spec) else spec, t[1], config, t[2])

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for t, d in zip(todo, pool.map(_run_triple, [task(t) for t in todo])):
                store(t, d)
    else:
        for t in todo:
            store(t, _run_triple(task(t)))
    records = [BenchmarkRecord.from_dict(done[t]) for t in triples if t in done]
    if out_dir is not None:
        write_tables(out_dir, records, config)
    return records


def _is_registry(spec: SystemSpec) -> bool:
    try:
        return get_system(spec.name).param_hash() == spec.param_hash() and get_system(spec.name).dt == spec.dt
    except KeyError:
        return False


RESULT_COLUMNS = ["system", "model", "seed", "tuned_hyper", "tuning_failed", "sMAPE_1lt", "valid_prediction_time",
                  "error_doubling_time", "divergence_flag", "valid_length", "train_walltime_seconds", "error"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_tables(out_dir, records, config: ExperimentConfig) -> None:
    """``results.csv`` (one row per record), ``records.csv`` (long-form curves) and ``manifest.json``."""
    out_dir = Path(out_dir)
    records = sorted(records, key=lambda r: (r.system, r.model, r.seed))
    with open(out_dir / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            row = r.result_row()
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
    with open(out_dir / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["system", "model", "seed", "metric", "horizon", "lyapunov_horizon", "value", "divergent_flag"])
        for r in records:
            for name in sorted(r.error_curves):
                for row in r.error_curves[name].rows(r.system, r.model):
                    w.writerow([row["system"], row["model"], r.seed, row["metric"], _fmt(row["horizon"]),
                                _fmt(row["lyapunov_horizon"]), _fmt(row["value"]), row["divergent_flag"]])
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": list(config.seeds),
        "systems": sorted({r.system for r in records}),
        "models": sorted({r.model for r in records}),
        "n_records": len(records),
        "n_failed": sum(r.error is not None for r in records),
        "versions": {"chaosbench": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    _write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_records(out_dir) -> list[BenchmarkRecord]:
    blobs = Path(out_dir) / "records"
    paths = sorted(blobs.glob("*.json"))
    return [BenchmarkRecord.from_dict(json.loads(p.read_text())) for p in paths]


# ---------------------------------------------------------------------------
# history titration


@dataclass
class TitrationPoint:
    history_points: int
    scores: list
    median: float
    skipped: str | None = None


def titrate_history(spec, kind, config: ExperimentConfig | None = None, history_lengths=(100, 250, 500, 1000),
                    seeds=None) -> list[TitrationPoint]:
    """sMAPE at one Lyapunov time against the fit history length.

    Every length ends at the same forecast origin, so the longest standard
    length reproduces ``run_experiment``.
    """
    config = ExperimentConfig() if config is None else config
    lengths = [int(n) for n in history_lengths]
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ValueError("history lengths must be increasing")
    seeds = config.seeds if seeds is None else tuple(seeds)
    out = []
    for n in lengths:
        scores, reason = [], None
        for seed in seeds:
            try:
                scores.append(run_experiment(spec, kind, config, seed, history_points=n).score("sMAPE"))
            except HistoryTooShortError as err:
                reason = str(err)
                break
        if reason is not None:
            out.append(TitrationPoint(n, [], math.nan, reason))
        else:
            out.append(TitrationPoint(n, scores, float(np.median(scores))))
    return out
