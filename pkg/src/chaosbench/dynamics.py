"""Dynamical-system specifications, fixed-step integration and trajectories.

Every system is an autonomous flow ``dx/dt = f(x)`` (non-autonomous forcing is
lifted into extra state variables) or a scalar delay equation
``dx/dt = f(x(t), x(t - tau))``.  Right-hand sides operate on the last axis so
that a whole ensemble of states can be advanced in one vectorised call.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

DIVERGENCE_BOUND = 1e12

Array = np.ndarray


class DivergenceError(RuntimeError):
    """Raised when an integration leaves the bounded region."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


@dataclass(eq=False)
class SystemSpec:
    """A named dynamical system.

    ``rhs(x, p)`` returns the vector field for states ``x`` of shape ``(..., dim)``
    and parameter mapping ``p``.  Delay systems take ``rhs(x, x_delayed, p)``.
    ``jacobian`` follows the same calling convention and returns ``(..., dim, dim)``
    (for delay systems a pair ``(df/dx, df/dx_delayed)``).
    """

    name: str
    dim: int
    params: Mapping[str, float]
    rhs: Callable[..., Array]
    default_state: Array
    jacobian: Callable[..., Array] | None = None
    delay: float | None = None
    dt: float = 0.01
    period: float = 1.0
    reference: str = ""
    lyapunov_max: float | None = None
    alignment: dict | None = None
    ergodicity_warning: bool = False

    def __post_init__(self) -> None:
        self.default_state = np.asarray(self.default_state, dtype=float)
        self.params = dict(self.params)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.default_state.shape != (self.dim,):
            raise ValueError(f"{self.name}: default_state must have shape ({self.dim},)")
        if self.delay is not None and self.delay <= 0:
            raise ValueError("delay must be positive")

    @property
    def is_delay(self) -> bool:
        return self.delay is not None

    def f(self, x: Array, x_delayed: Array | None = None) -> Array:
        if self.is_delay:
            return self.rhs(x, x_delayed, self.params)
        return self.rhs(x, self.params)

    def jac(self, x: Array, x_delayed: Array | None = None):
        """Analytic Jacobian, or central finite differences when none is given."""
        if self.jacobian is not None:
            if self.is_delay:
                return self.jacobian(x, x_delayed, self.params)
            return self.jacobian(x, self.params)
        if self.is_delay:
            jx = finite_difference_jacobian(lambda z: self.rhs(z, x_delayed, self.params), x)
            jd = finite_difference_jacobian(lambda z: self.rhs(x, z, self.params), x_delayed)
            return jx, jd
        return finite_difference_jacobian(lambda z: self.rhs(z, self.params), x)

    def param_hash(self) -> str:
        payload = json.dumps(
            {"name": self.name, "params": sorted(self.params.items()), "delay": self.delay},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "params": dict(self.params),
            "delay": self.delay,
            "dt": self.dt,
            "t_peak": self.period,
            "lyapunov_max": self.lyapunov_max,
            "aligned": self.alignment is not None,
            "reference": self.reference,
        }


def finite_difference_jacobian(func: Callable[[Array], Array], x: Array, eps: float = 1e-6) -> Array:
    """Central-difference Jacobian of ``func`` at ``x`` (supports leading batch axes)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for j in range(d):
        h = eps * max(1.0, float(np.max(np.abs(x[..., j]))))
        step = np.zeros(d)
        step[j] = h
        cols.append((func(x + step) - func(x - step)) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass
class Trajectory:
    """Uniformly sampled multivariate series of shape ``(T, D)``."""

    values: Array
    dt: float
    t0: float = 0.0
    system_name: str = ""
    granularity: float | None = None
    seed: int | None = None

    min_length = 2

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("trajectory values must be a T x D matrix")
        if len(v) < self.min_length:
            raise ValueError(f"trajectory needs at least {self.min_length} points")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory contains non-finite values")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.values = v

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> Array:
        return self.t0 + self.dt * np.arange(len(self))

    def segment(self, start: int, stop: int | None = None) -> "Trajectory":
        stop = len(self) if stop is None else stop
        return Trajectory(
            self.values[start:stop].copy(),
            self.dt,
            self.t0 + start * self.dt,
            self.system_name,
            self.granularity,
            self.seed,
        )

    def with_values(self, values: Array) -> "Trajectory":
        return Trajectory(values, self.dt, self.t0, self.system_name, self.granularity, self.seed)

    def to_csv(self, path: str | Path) -> None:
        header = ",".join(["t"] + [f"x{i}" for i in range(self.dim)])
        data = np.column_stack([self.times, self.values])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path, system_name: str = "", granularity: float | None = None) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        return cls(data[:, 1:], float(t[1] - t[0]), float(t[0]), system_name, granularity)

    def to_json(self) -> str:
        return json.dumps(
            {
                "system_name": self.system_name,
                "dt": self.dt,
                "t0": self.t0,
                "granularity": self.granularity,
                "seed": self.seed,
                "values": self.values.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        d = json.loads(text)
        return cls(
            np.asarray(d["values"], dtype=float),
            d["dt"],
            d.get("t0", 0.0),
            d.get("system_name", ""),
            d.get("granularity"),
            d.get("seed"),
        )


def rk4_step(f: Callable[[Array], Array], x: Array, dt: float) -> Array:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_bounded(x: Array, step: int) -> None:
    if not np.all(np.abs(x) <= DIVERGENCE_BOUND):
        raise DivergenceError(step)


class DelayBuffer:
    """History of a delay system on the integration grid.

    Stores ``(n_hist + n_steps + 1, ...)`` samples; index ``offset`` is time 0.
    Delayed values at stage times are linearly interpolated.
    """

    def __init__(self, history: Array, delay: float, dt: float, n_steps: int):
        if dt > delay:
            raise ValueError("delay systems require dt <= delay")
        history = np.asarray(history)
        dtype = np.result_type(history.dtype, float)
        history = history.astype(dtype, copy=False)
        self.lag = delay / dt
        self.offset = int(np.ceil(self.lag)) + 1
        shape = history.shape[1:] if history.ndim > 1 else ()
        self.data = np.empty((self.offset + n_steps + 1,) + shape, dtype=dtype)
        if history.ndim >= 2 and history.shape[0] >= 2:
            # samples evenly spread over [-delay, 0]; extend with the oldest value
            k = history.shape[0]
            pos = (np.arange(self.offset + 1) - self.offset) * dt / delay * (k - 1) + (k - 1)
            pos = np.clip(pos, 0.0, k - 1)
            i0 = np.minimum(np.floor(pos).astype(int), k - 2)
            w = (pos - i0).reshape((-1,) + (1,) * len(shape))
            self.data[: self.offset + 1] = (1 - w) * history[i0] + w * history[i0 + 1]
        else:
            self.data[: self.offset + 1] = history.reshape(shape) if history.ndim >= 2 else history
        self.n = 0

    @property
    def current(self) -> Array:
        return self.data[self.offset + self.n]

    def delayed(self, c: float) -> Array:
        """State at time ``t_n + c*dt - delay``."""
        p = self.offset + self.n + c - self.lag
        i0 = int(np.floor(p))
        w = p - i0
        if w < 1e-12:
            return self.data[i0]
        return (1.0 - w) * self.data[i0] + w * self.data[i0 + 1]

    def push(self, x: Array) -> None:
        self.n += 1
        self.data[self.offset + self.n] = x

    def window(self) -> Array:
        """Samples covering the last ``offset + 1`` grid points (the delay state)."""
        end = self.offset + self.n + 1
        return self.data[end - self.offset - 1 : end]


def delay_rk4_step(spec: SystemSpec, buf: DelayBuffer, dt: float) -> Array:
    x = buf.current
    d0, dh, d1 = buf.delayed(0.0), buf.delayed(0.5), buf.delayed(1.0)
    k1 = spec.f(x, d0)
    k2 = spec.f(x + 0.5 * dt * k1, dh)
    k3 = spec.f(x + 0.5 * dt * k2, dh)
    k4 = spec.f(x + dt * k3, d1)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_states(spec: SystemSpec, x0: Array, dt: float, n_steps: int) -> Array:
    """Raw RK4 integration; returns ``(n_steps + 1, ..., D)``.

    ``x0`` may carry leading batch axes.  For delay systems ``x0`` is either a
    state (constant history) or a history array ``(k, ..., D)`` sampled evenly
    over ``[-delay, 0]``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    if spec.is_delay:
        history = x0
        if x0.ndim == 1 and x0.shape[-1] == spec.dim:
            history = x0
        buf = DelayBuffer(history, spec.delay, dt, n_steps)
        for i in range(n_steps):
            x = delay_rk4_step(spec, buf, dt)
            _check_bounded(x, i + 1)
            buf.push(x)
        return buf.data[buf.offset :].copy()
    out = np.empty((n_steps + 1,) + x0.shape)
    out[0] = x0
    x = x0
    f = spec.f
    for i in range(n_steps):
        x = rk4_step(f, x, dt)
        _check_bounded(x, i + 1)
        out[i + 1] = x
    return out


def integrate(spec: SystemSpec, x0: Array, dt: float, n_steps: int, seed: int | None = None) -> Trajectory:
    """Fixed-step RK4 trajectory with ``n_steps + 1`` points."""
    states = integrate_states(spec, x0, dt, n_steps)
    return Trajectory(states.reshape(n_steps + 1, spec.dim), dt, 0.0, spec.name, None, seed)


def sample_attractor(spec: SystemSpec, seed: int, transient_periods: float = 20.0, dt: float | None = None) -> Array:
    """A seeded point on the attractor.

    The default state is perturbed multiplicatively at relative scale 1e-2 and
    integrated for ``transient_periods`` rough periods.  Delay systems return
    their delay state as a ``(k, D)`` history spanning ``[-delay, 0]``.
    """
    if transient_periods < 10:
        raise ValueError("transient_periods must be at least 10")
    dt = spec.dt if dt is None else dt
    rng = np.random.default_rng(seed)
    x0 = spec.default_state * (1.0 + 1e-2 * rng.standard_normal(spec.dim))
    n = int(np.ceil(transient_periods * spec.period / dt))
    if spec.is_delay:
        m = max(int(round(spec.delay / dt)), 1)
        hist = spec.default_state * (1.0 + 1e-2 * rng.standard_normal((m + 1, spec.dim)))
        try:
            buf_states = integrate_states(spec, hist, spec.delay / m, n + m)
        except DivergenceError as err:
            raise DivergenceError(err.step, f"{spec.name}: transient diverged; use a smaller perturbation") from err
        return buf_states[-(m + 1) :].copy()
    try:
        states = integrate_states(spec, x0, dt, n)
    except DivergenceError as err:
        raise DivergenceError(err.step, f"{spec.name}: transient diverged; use a smaller perturbation") from err
    return states[-1].copy()


def attractor_ensemble(spec: SystemSpec, n: int, seed: int, transient_periods: float = 20.0,
                       dt: float | None = None) -> Array:
    """``n`` seeded attractor points integrated as one batch.

    Returns ``(n, D)`` for flows and a ``(k, n, D)`` history stack for delay
    systems, where each history spans ``[-delay, 0]``.
    """
    if transient_periods < 10:
        raise ValueError("transient_periods must be at least 10")
    dt = spec.dt if dt is None else dt
    rng = np.random.default_rng(seed)
    steps = int(np.ceil(transient_periods * spec.period / dt))
    if spec.is_delay:
        m = max(int(round(spec.delay / dt)), 1)
        hist = spec.default_state * (1.0 + 1e-2 * rng.standard_normal((m + 1, n, spec.dim)))
        buf = DelayBuffer(hist, spec.delay, spec.delay / m, steps + m)
        for i in range(steps + m):
            x = delay_rk4_step(spec, buf, spec.delay / m)
            _check_bounded(x, i + 1)
            buf.push(x)
        return buf.data[buf.offset + buf.n - m : buf.offset + buf.n + 1].copy()
    x = spec.default_state * (1.0 + 1e-2 * rng.standard_normal((n, spec.dim)))
    f = spec.f
    for i in range(steps):
        x = rk4_step(f, x, dt)
        _check_bounded(x, i + 1)
    return x


def current_state(x: Array) -> Array:
    """Last state of a point or delay history."""
    x = np.asarray(x)
    return x[-1] if x.ndim == 2 else x
