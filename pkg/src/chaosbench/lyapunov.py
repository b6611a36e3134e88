"""Lyapunov exponents from the equations of motion.

Two independent routes are provided.  The QR route evolves an orthonormal
tangent frame with the Jacobian (variational RK4) and re-orthonormalises at
every step.  The divergence route never touches the Jacobian: it follows a
base trajectory and a copy perturbed by a relative offset of order 1e-14 and
times how long the separation takes to exceed 1e-8.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    DelayBuffer,
    SystemSpec,
    _check_bounded,
    attractor_ensemble,
    delay_rk4_step,
    rk4_step,
)

LONG_ENSEMBLE = (20, 5000)
SHORT_ENSEMBLE = (500, 100)
# tangent frames converge to the leading direction at rate exp(-(l1 - l2) t);
# short windows are only unbiased once that transient has died out
FRAME_ALIGN_PERIODS = 20.0


class ErgodicityWarning(UserWarning):
    """Long- and short-ensemble Lyapunov estimates disagree."""


@dataclass(frozen=True)
class PerturbationConfig:
    """Initial relative perturbation size and the separation stopping threshold."""

    xi_norm: float = 1e-14
    stop_norm: float = 1e-8

    def __post_init__(self) -> None:
        if not (0 < self.xi_norm < self.stop_norm):
            raise ValueError("need 0 < xi_norm < stop_norm")
        if self.xi_norm > 1e-14:
            raise ValueError("xi_norm must not exceed 1e-14")


@dataclass
class NaiveResult:
    """Outcome of a divergence-time measurement.

    ``exponent`` is ``None`` and ``chaotic`` is False when the separation never
    crossed the stopping threshold within the step budget.
    """

    exponent: float | None
    chaotic: bool
    elapsed: float
    n_runs: int = 1


@dataclass
class LyapunovEstimate:
    spectrum: np.ndarray
    mode: str
    method: str
    n_traj: int
    n_steps: int
    per_trajectory: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    @property
    def lyapunov_max(self) -> float:
        return float(self.spectrum[0])

    @property
    def stderr(self) -> float:
        p = self.per_trajectory
        if p.size < 2:
            return float("nan")
        return float(np.std(p, ddof=1) / np.sqrt(p.size))


@dataclass
class CycleLog:
    """Counted divergence cycles: member index, first and last step, log growth."""

    member: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    growth: np.ndarray
    dt: float

    def exponent(self) -> float:
        return float(self.growth.sum() / ((self.stop - self.start).sum() * self.dt))


def agree_to_sig_figs(a: float, b: float, figures: int = 2) -> bool:
    """True when ``a`` and ``b`` differ by less than one unit in the given significant figure."""
    scale = max(abs(a), abs(b))
    if scale == 0:
        return True
    unit = 10.0 ** (math.floor(math.log10(scale)) - figures + 1)
    return abs(a - b) < unit


# ---------------------------------------------------------------------------
# QR route


def _variational_step(spec: SystemSpec, x, q, dt):
    """One RK4 step of ``(x, Q)`` under ``dQ/dt = J(x) Q``; batched over axis 0."""
    f, jac = spec.f, spec.jac
    k1 = f(x)
    l1 = jac(x) @ q
    x2 = x + 0.5 * dt * k1
    k2 = f(x2)
    l2 = jac(x2) @ (q + 0.5 * dt * l1)
    x3 = x + 0.5 * dt * k2
    k3 = f(x3)
    l3 = jac(x3) @ (q + 0.5 * dt * l2)
    x4 = x + dt * k3
    k4 = f(x4)
    l4 = jac(x4) @ (q + dt * l3)
    xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    qn = q + (dt / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    return xn, qn


def _qr_logs(q):
    # LAPACK has no extended-precision QR; the frame itself only needs float64
    qq, r = np.linalg.qr(q.astype(float, copy=False))
    d = np.diagonal(r, axis1=-2, axis2=-1)
    sign = np.where(d < 0, -1.0, 1.0)
    return (qq * sign[..., None, :]).astype(q.dtype, copy=False), np.log(np.abs(d))


def qr_log_increments(spec: SystemSpec, x0, dt: float, n_steps: int, n_exponents: int | None = None,
                      n_discard: int = 0, seed: int = 0, dtype=float):
    """Per-step ``log|R_ii|`` along a batch of trajectories.

    ``x0`` is ``(M, D)`` for flows or a ``(k, M, D)`` history for delay systems.
    Returns an array of shape ``(n_steps, M, n_exponents)``; the first
    ``n_discard`` steps align the frame and are dropped.  ``dtype`` sets the
    precision of the base trajectory.
    """
    if spec.is_delay:
        return _delay_qr_logs(spec, np.asarray(x0, dtype=dtype), dt, n_steps,
                              3 if n_exponents is None else n_exponents, n_discard, np.random.default_rng(seed))
    x = np.atleast_2d(np.asarray(x0, dtype=dtype))
    m, d = x.shape
    k = d if n_exponents is None else n_exponents
    q = np.broadcast_to(np.eye(d, dtype=dtype)[:, :k], (m, d, k)).copy()
    logs = np.empty((n_steps, m, k))
    for i in range(n_discard + n_steps):
        x, q = _variational_step(spec, x, q, dt)
        _check_bounded(x, i + 1)
        q, lg = _qr_logs(q)
        if i >= n_discard:
            logs[i - n_discard] = lg
    return logs


def _delay_qr_logs(spec: SystemSpec, history, dt: float, n_steps: int, k: int, n_discard: int,
                   rng: np.random.Generator):
    """QR route for delay equations.

    The tangent state is the discretised history segment.  Each tangent vector
    carries its own buffer and is advanced with the linearised RK4 stages,
    interpolated exactly like the base trajectory.
    """
    history = np.asarray(history)
    if history.ndim == 2:
        history = history[:, None, :]
    total = n_discard + n_steps
    base = DelayBuffer(history, spec.delay, dt, total)
    m, d = history.shape[1], spec.dim
    width = base.offset + 1
    tan = DelayBuffer(np.zeros((2, m, k, d), dtype=history.dtype), spec.delay, dt, total)
    init = np.linalg.qr(rng.standard_normal((m, width * d, k)))[0]
    tan.data[:width] = init.reshape(m, width, d, k).transpose(1, 0, 3, 2)
    logs = np.empty((n_steps, m, k))
    f, jac = spec.f, spec.jac

    def lin(xs, xd, vs, vd):
        a, b = jac(xs, xd)
        return vs @ np.swapaxes(a, -1, -2) + vd @ np.swapaxes(b, -1, -2)

    for i in range(total):
        x = base.current
        d0, dh, d1 = base.delayed(0.0), base.delayed(0.5), base.delayed(1.0)
        v = tan.current
        e0, eh, e1 = tan.delayed(0.0), tan.delayed(0.5), tan.delayed(1.0)
        k1 = f(x, d0)
        m1 = lin(x, d0, v, e0)
        x2, v2 = x + 0.5 * dt * k1, v + 0.5 * dt * m1
        k2 = f(x2, dh)
        m2 = lin(x2, dh, v2, eh)
        x3, v3 = x + 0.5 * dt * k2, v + 0.5 * dt * m2
        k3 = f(x3, dh)
        m3 = lin(x3, dh, v3, eh)
        x4, v4 = x + dt * k3, v + dt * m3
        k4 = f(x4, d1)
        m4 = lin(x4, d1, v4, e1)
        xn = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        vn = v + (dt / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
        _check_bounded(xn, i + 1)
        base.push(xn)
        tan.push(vn)
        end = tan.offset + tan.n + 1
        seg = tan.data[end - width : end]  # (width, M, k, D)
        mat = seg.transpose(1, 0, 3, 2).reshape(m, width * d, k)
        qq, lg = _qr_logs(mat)
        tan.data[end - width : end] = qq.reshape(m, width, d, k).transpose(1, 0, 3, 2)
        if i >= n_discard:
            logs[i - n_discard] = lg
    return logs


def lyapunov_spectrum_qr(spec: SystemSpec, x0, dt: float, n_steps: int, n_exponents: int | None = None,
                         n_discard: int | None = None, seed: int = 0) -> np.ndarray:
    """Lyapunov spectrum per unit time, sorted descending, from one trajectory.

    ``n_discard`` steps (default a tenth of ``n_steps``) let the tangent frame
    align before exponents are accumulated.  Delay systems return the leading
    three exponents unless ``n_exponents`` says otherwise.
    """
    if n_discard is None:
        n_discard = n_steps // 10
    x0 = np.asarray(x0, dtype=float)
    batch = x0[:, None, :] if spec.is_delay and x0.ndim == 2 else x0[None, :]
    logs = qr_log_increments(spec, batch, dt, n_steps, n_exponents, n_discard, seed)
    return np.sort(logs[:, 0, :].sum(axis=0) / (n_steps * dt))[::-1]


# ---------------------------------------------------------------------------
# divergence route


def _perturb(x, xi_norm: float, rng: np.random.Generator, member_axis: int = 0):
    """``x * (1 + xi)`` with ``|xi| = xi_norm`` independently per ensemble member."""
    xi = rng.standard_normal(x.shape)
    axes = tuple(a for a in range(x.ndim) if a != member_axis)
    norm = np.sqrt(np.sum(xi * xi, axis=axes, keepdims=True))
    return x * (1.0 + xi * (xi_norm / norm))


def naive_cycles(spec: SystemSpec, x0, dt: float, config: PerturbationConfig = PerturbationConfig(),
                 n_cycles: int = 1, max_steps: int = 200_000, seed: int = 0, keep_first: bool | None = None,
                 dtype=np.longdouble):
    """Divergence cycles along a batch of base trajectories.

    Each perturbed copy starts at ``x0 * (1 + xi)``.  When its separation
    exceeds ``stop_norm`` the cycle is recorded and the copy is pulled back to
    its initial separation along the current separation direction.  The first
    cycle carries the transient of the random initial orientation and is
    dropped when more than one cycle is requested (``keep_first`` overrides).

    Returns ``(CycleLog, finished)`` where ``finished`` marks members that
    completed all cycles within ``max_steps``.
    """
    rng = np.random.default_rng(seed)
    keep_first = (n_cycles == 1) if keep_first is None else keep_first
    need = n_cycles if keep_first else n_cycles + 1
    if spec.is_delay:
        hist = np.asarray(x0, dtype=dtype)
        if hist.ndim == 2:
            hist = hist[:, None, :]
        a = DelayBuffer(hist, spec.delay, dt, max_steps)
        b = DelayBuffer(_perturb(hist, config.xi_norm, rng, member_axis=1), spec.delay, dt, max_steps)
        m = hist.shape[1]

        def sep():
            diff = a.window() - b.window()
            return np.sqrt(np.sum(diff * diff, axis=(0, 2)))

        def advance():
            xa = delay_rk4_step(spec, a, dt)
            xb = delay_rk4_step(spec, b, dt)
            a.push(xa)
            b.push(xb)
            return xa

        def rescale(mask, factor):
            wa, wb = a.window(), b.window()
            end = b.offset + b.n + 1
            b.data[end - len(wb) : end][:, mask] = wa[:, mask] + (wb[:, mask] - wa[:, mask]) * factor[None, :, None]
    else:
        state = {"a": np.atleast_2d(np.asarray(x0, dtype=dtype))}
        state["b"] = _perturb(state["a"], config.xi_norm, rng)
        m = state["a"].shape[0]
        f = spec.f

        def sep():
            diff = state["a"] - state["b"]
            return np.sqrt(np.sum(diff * diff, axis=1))

        def advance():
            state["a"] = rk4_step(f, state["a"], dt)
            state["b"] = rk4_step(f, state["b"], dt)
            return state["a"]

        def rescale(mask, factor):
            xa = state["a"][mask]
            state["b"][mask] = xa + (state["b"][mask] - xa) * factor[:, None]

    s0 = sep()
    start = np.zeros(m, dtype=int)
    done = np.zeros(m, dtype=int)
    rec_m, rec_a, rec_b, rec_g = [], [], [], []
    shrunk = np.zeros(m, dtype=bool)
    for i in range(max_steps):
        xa = advance()
        _check_bounded(xa, i + 1)
        s = sep()
        shrunk |= s == 0.0
        hit = (s > config.stop_norm) & (done < need)
        if hit.any():
            idx = np.nonzero(hit)[0]
            for j in idx:
                if keep_first or done[j] > 0:
                    rec_m.append(j)
                    rec_a.append(start[j])
                    rec_b.append(i + 1)
                    rec_g.append(math.log(s[j] / s0[j]))
            done[idx] += 1
            start[idx] = i + 1
            rescale(hit, s0[hit] / s[hit])
        if np.all((done >= need) | shrunk):
            break
    log = CycleLog(np.array(rec_m, dtype=int), np.array(rec_a, dtype=int), np.array(rec_b, dtype=int),
                   np.array(rec_g, dtype=float), dt)
    return log, done >= need


def lyapunov_max_naive(spec: SystemSpec, x0, config: PerturbationConfig = PerturbationConfig(),
                       dt: float | None = None, n_cycles: int = 1, max_steps: int = 200_000,
                       seed: int = 0) -> NaiveResult:
    """Largest exponent from the divergence time of one perturbed copy.

    With ``n_cycles == 1`` this is a single measurement
    ``log(sep_final / sep_initial) / elapsed``; larger values chain renormalised
    cycles and average them, excluding the orientation transient of the first.
    """
    dt = spec.dt if dt is None else dt
    x0 = np.asarray(x0, dtype=float)
    batch = x0[:, None, :] if spec.is_delay and x0.ndim == 2 else x0[None, :]
    log, finished = naive_cycles(spec, batch, dt, config, n_cycles, max_steps, seed)
    if not finished[0] or log.growth.size == 0:
        return NaiveResult(None, False, max_steps * dt, 0)
    elapsed = float((log.stop - log.start).sum() * dt)
    return NaiveResult(log.exponent(), True, elapsed, int(log.growth.size))


# ---------------------------------------------------------------------------
# ensembles


def _default_dt(spec: SystemSpec, dt: float | None) -> float:
    return spec.dt if dt is None else dt


def ensemble_lyapunov(spec: SystemSpec, mode: str = "long", **kwargs) -> float:
    """Ensemble-averaged largest Lyapunov exponent; see ``ensemble_lyapunov_estimate``."""
    return ensemble_lyapunov_estimate(spec, mode, **kwargs).lyapunov_max


def ensemble_lyapunov_estimate(spec: SystemSpec, mode: str = "long", method: str = "qr", dt: float | None = None,
                               n_traj: int | None = None, n_steps: int | None = None, seed: int = 0,
                               n_discard: int | None = None) -> LyapunovEstimate:
    """Ensemble-averaged Lyapunov estimate.

    ``mode`` selects the ensemble shape (many short trajectories or a few long
    ones); ``method`` selects the QR spectrum or the divergence route.  For the
    divergence route ``n_steps`` is the step budget per member and each member
    contributes as many renormalised cycles as fit, so it needs long mode.
    """
    if mode not in ("long", "short"):
        raise ValueError("mode must be 'long' or 'short'")
    dt = _default_dt(spec, dt)
    m_def, n_def = LONG_ENSEMBLE if mode == "long" else SHORT_ENSEMBLE
    m = n_traj or m_def
    n = n_steps or n_def
    x0 = attractor_ensemble(spec, m, seed, dt=dt)
    if method == "qr":
        if n_discard is None:
            n_discard = max(n // 10, int(round(FRAME_ALIGN_PERIODS * spec.period / dt)))
        logs = qr_log_increments(spec, x0, dt, n, None, n_discard, seed)
        per = logs.sum(axis=0) / (n * dt)  # (M, k)
        spectrum = np.sort(per.mean(axis=0))[::-1]
        return LyapunovEstimate(spectrum, mode, method, m, n, per.max(axis=1))
    if method == "naive":
        if mode == "short":
            raise ValueError("the divergence route needs long windows; use mode='long'")
        log, finished = naive_cycles(spec, x0, dt, n_cycles=10**9, max_steps=n, seed=seed)
        if log.growth.size == 0:
            return LyapunovEstimate(np.array([np.nan]), mode, method, m, n)
        per = np.array([
            log.growth[log.member == j].sum() / ((log.stop - log.start)[log.member == j].sum() * dt)
            for j in np.unique(log.member)
        ])
        return LyapunovEstimate(np.array([log.exponent()]), mode, method, m, n, per)
    raise ValueError("method must be 'qr' or 'naive'")


def ergodicity_check(long: LyapunovEstimate, short: LyapunovEstimate, n_sigma: float = 3.0) -> bool:
    """Long/short consistency; warns with ``ErgodicityWarning`` on disagreement.

    Agreement means equal to two significant figures, or within ``n_sigma``
    combined standard errors when the ensembles are too small to resolve two
    figures.
    """
    a, b = long.lyapunov_max, short.lyapunov_max
    se = math.hypot(np.nan_to_num(long.stderr), np.nan_to_num(short.stderr))
    ok = agree_to_sig_figs(a, b, 2) or abs(a - b) <= n_sigma * se
    if not ok:
        warnings.warn(f"long ({a:.4g}) and short ({b:.4g}) ensemble estimates disagree", ErgodicityWarning,
                      stacklevel=2)
    return ok


@dataclass
class TwoRouteResult:
    """Paired comparison of the QR and divergence routes on shared base trajectories."""

    system: str
    qr_matched: float
    naive: float
    qr_spectrum: np.ndarray
    n_cycles: int
    dt: float

    @property
    def agree(self) -> bool:
        return agree_to_sig_figs(self.qr_matched, self.naive, 2)

    @property
    def relative_gap(self) -> float:
        return abs(self.qr_matched - self.naive) / abs(self.qr_matched)


def two_route_lyapunov(spec: SystemSpec, dt: float | None = None, n_traj: int = 20, n_cycles: int = 3,
                       max_steps: int = 100_000, seed: int = 0) -> TwoRouteResult:
    """Run both routes from identical initial states and compare them.

    The divergence route runs first and reports which step windows it counted.
    The QR route then integrates the same base trajectories independently,
    and its first exponent is accumulated over exactly those windows, so the
    comparison measures method disagreement rather than sampling noise.  Both
    routes integrate in extended precision: a 1e-14 relative perturbation is
    too close to double-precision roundoff, which would otherwise inflate the
    separation and bias the divergence route upward.
    """
    dt = _default_dt(spec, dt)
    x0 = attractor_ensemble(spec, n_traj, seed, dt=dt)
    log, finished = naive_cycles(spec, x0, dt, n_cycles=n_cycles, max_steps=max_steps, seed=seed)
    if log.growth.size == 0:
        raise RuntimeError(f"{spec.name}: separation never reached the stopping threshold")
    horizon = int(log.stop.max())
    logs = qr_log_increments(spec, x0, dt, horizon, None, 0, seed, dtype=np.longdouble)
    cum = np.concatenate([np.zeros((1,) + logs.shape[1:]), np.cumsum(logs, axis=0)])
    top = cum[..., 0]
    grow = top[log.stop, log.member] - top[log.start, log.member]
    matched = float(grow.sum() / ((log.stop - log.start).sum() * dt))
    discard = min(horizon // 5, horizon - 1)
    spectrum = np.sort((cum[-1] - cum[discard]).mean(axis=0) / ((horizon - discard) * dt))[::-1]
    return TwoRouteResult(spec.name, matched, log.exponent(), spectrum, int(log.growth.size), dt)
