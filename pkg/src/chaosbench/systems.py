"""Canonical chaotic systems with literature parameterizations and analytic Jacobians."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dynamics import SystemSpec


def _stack(*cols):
    if all(np.ndim(c) == 0 for c in cols):
        return np.array(cols, dtype=np.result_type(*cols, float))
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _jac(rows):
    """Assemble ``(..., D, D)`` from nested row lists of broadcastable arrays."""
    flat = [np.asarray(v, dtype=float) for row in rows for v in row]
    flat = np.broadcast_arrays(*flat)
    d = len(rows)
    return np.stack(flat, axis=-1).reshape(flat[0].shape + (d, d))


def _xyz(x):
    return x[..., 0], x[..., 1], x[..., 2]


# Lorenz (1963)
def lorenz_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(p["sigma"] * (b - a), a * (p["rho"] - c) - b, a * b - p["beta"] * c)


def lorenz_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    s = p["sigma"]
    return _jac([[-s * o, s * o, z], [p["rho"] - c, -o, -a], [b, a, -p["beta"] * o]])


# Rossler (1976)
def rossler_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(-b - c, a + p["a"] * b, p["b"] + c * (a - p["c"]))


def rossler_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, -o, -o], [o, p["a"] * o, z], [c, z, a - p["c"]]])


# Chua double scroll, piecewise-linear diode
def _chua_h(x, p):
    m0, m1 = p["m0"], p["m1"]
    return m1 * x + 0.5 * (m0 - m1) * (np.abs(x + 1.0) - np.abs(x - 1.0))


def chua_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(p["alpha"] * (b - a - _chua_h(a, p)), a - b + c, -p["beta"] * b)


def chua_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    dh = np.where(np.abs(a) < 1.0, p["m0"], p["m1"])
    al = p["alpha"]
    return _jac([[-al * (1.0 + dh), al * o, z], [o, -o, o], [z, -p["beta"] * o, z]])


# Thomas (1999) cyclically symmetric attractor
def thomas_rhs(x, p):
    a, b, c = _xyz(x)
    k = p["b"]
    return _stack(np.sin(b) - k * a, np.sin(c) - k * b, np.sin(a) - k * c)


def thomas_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    k = p["b"]
    return _jac([[-k * o, np.cos(b), z], [z, -k * o, np.cos(c)], [np.cos(a), z, -k * o]])


# Halvorsen (Sprott, Elegant Chaos)
def halvorsen_rhs(x, p):
    a, b, c = _xyz(x)
    s = p["a"]
    return _stack(
        -s * a - 4 * b - 4 * c - b * b,
        -s * b - 4 * c - 4 * a - c * c,
        -s * c - 4 * a - 4 * b - a * a,
    )


def halvorsen_jac(x, p):
    a, b, c = _xyz(x)
    o = np.ones_like(a)
    s = p["a"]
    return _jac([[-s * o, -4 - 2 * b, -4 * o], [-4 * o, -s * o, -4 - 2 * c], [-4 - 2 * a, -4 * o, -s * o]])


# Dadras & Momeni (2009)
def dadras_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(
        b - p["a"] * a + p["b"] * b * c,
        p["c"] * b - a * c + c,
        p["d"] * a * b - p["h"] * c,
    )


def dadras_jac(x, p):
    a, b, c = _xyz(x)
    o = np.ones_like(a)
    return _jac(
        [
            [-p["a"] * o, 1 + p["b"] * c, p["b"] * b],
            [-c, p["c"] * o, 1 - a],
            [p["d"] * b, p["d"] * a, -p["h"] * o],
        ]
    )


# Chen & Ueta (1999)
def chen_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(p["a"] * (b - a), (p["c"] - p["a"]) * a - a * c + p["c"] * b, a * b - p["b"] * c)


def chen_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[-p["a"] * o, p["a"] * o, z], [p["c"] - p["a"] - c, p["c"] * o, -a], [b, a, -p["b"] * o]])


# Sprott (1994) minimal quadratic flows
def sprott_b_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(b * c, a - b, 1.0 - a * b)


def sprott_b_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, c, b], [o, -o, z], [-b, -a, z]])


def sprott_c_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(b * c, a - b, 1.0 - a * a)


def sprott_c_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, c, b], [o, -o, z], [-2 * a, z, z]])


def sprott_d_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(-b, a + c, a * c + 3.0 * b * b)


def sprott_d_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, -o, z], [o, z, o], [c, 6 * b, a]])


def sprott_e_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(b * c, a * a - b, 1.0 - 4.0 * a)


def sprott_e_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, c, b], [2 * a, -o, z], [-4 * o, z, z]])


def sprott_f_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(b + c, -a + 0.5 * b, a * a - c)


def sprott_f_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, o, o], [-o, 0.5 * o, z], [2 * a, z, -o]])


# Rucklidge (1992) double convection
def rucklidge_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(-p["k"] * a + p["l"] * b - b * c, a, -c + b * b)


def rucklidge_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[-p["k"] * o, p["l"] - c, -b], [o, z, z], [z, 2 * b, -o]])


# Arneodo, Coullet & Tresser (1981) jerk form
def arneodo_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(b, c, -p["a"] * a - p["b"] * b - c + p["d"] * a**3)


def arneodo_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, o, z], [z, z, o], [-p["a"] + 3 * p["d"] * a * a, -p["b"] * o, -o]])


# Hadley circulation model (Lorenz 1984)
def hadley_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(
        -b * b - c * c - p["a"] * a + p["a"] * p["F"],
        a * b - p["b"] * a * c - b + p["G"],
        p["b"] * a * b + a * c - c,
    )


def hadley_jac(x, p):
    a, b, c = _xyz(x)
    o = np.ones_like(a)
    return _jac(
        [
            [-p["a"] * o, -2 * b, -2 * c],
            [b - p["b"] * c, a - 1, -p["b"] * a],
            [p["b"] * b + c, p["b"] * a, a - 1],
        ]
    )


# Shimizu & Morioka (1980)
def shimizu_rhs(x, p):
    a, b, c = _xyz(x)
    return _stack(b, a - p["a"] * b - a * c, -p["b"] * c + a * a)


def shimizu_jac(x, p):
    a, b, c = _xyz(x)
    z, o = np.zeros_like(a), np.ones_like(a)
    return _jac([[z, o, z], [1 - c, -p["a"] * o, -a], [2 * a, z, -p["b"] * o]])


# Duffing oscillator; the periodic drive is generated by a stable unit-radius
# oscillator (u, w) so the lifted flow is autonomous and bounded.
def duffing_rhs(x, p):
    q, v, u, w = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    om = p["omega"]
    g = 1.0 - u * u - w * w
    return _stack(
        v,
        -p["delta"] * v - p["alpha"] * q - p["beta"] * q**3 + p["gamma"] * u,
        -om * w + u * g,
        om * u + w * g,
    )


def duffing_jac(x, p):
    q, v, u, w = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    z, o = np.zeros_like(q), np.ones_like(q)
    om = p["omega"]
    g = 1.0 - u * u - w * w
    return _jac(
        [
            [z, o, z, z],
            [-p["alpha"] - 3 * p["beta"] * q * q, -p["delta"] * o, p["gamma"] * o, z],
            [z, z, g - 2 * u * u, -om - 2 * u * w],
            [z, z, om - 2 * u * w, g - 2 * w * w],
        ]
    )


# Mackey & Glass (1977)
def mackey_glass_rhs(x, xd, p):
    return p["beta"] * xd / (1.0 + xd ** p["n"]) - p["gamma"] * x


def mackey_glass_jac(x, xd, p):
    n = p["n"]
    xn = xd**n
    d = p["beta"] * (1.0 + (1.0 - n) * xn) / (1.0 + xn) ** 2
    return -p["gamma"] * np.ones_like(x)[..., None], d[..., None]


def base_registry() -> list[SystemSpec]:
    """Registry entries with their rough literature step and period, before alignment."""
    return [
        SystemSpec("Lorenz", 3, {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}, lorenz_rhs,
                   [-9.7869, -15.0380, 20.5331], lorenz_jac, dt=0.01, period=0.75,
                   reference="Lorenz 1963"),
        SystemSpec("Rossler", 3, {"a": 0.2, "b": 0.2, "c": 5.7}, rossler_rhs,
                   [6.5134, 0.4817, 0.0224], rossler_jac, dt=0.05, period=6.0,
                   reference="Rossler 1976"),
        SystemSpec("Chua", 3, {"alpha": 15.6, "beta": 28.0, "m0": -8.0 / 7.0, "m1": -5.0 / 7.0},
                   chua_rhs, [0.6, -0.1, -0.6], chua_jac, dt=0.01, period=2.0,
                   reference="Matsumoto, Chua & Komuro 1985"),
        SystemSpec("Thomas", 3, {"b": 0.18}, thomas_rhs, [0.1, 0.0, 0.0], thomas_jac,
                   dt=0.1, period=25.0, reference="Thomas 1999"),
        SystemSpec("Halvorsen", 3, {"a": 1.4}, halvorsen_rhs, [-6.4, 0.0, 0.0], halvorsen_jac,
                   dt=0.01, period=2.5, reference="Sprott 2010"),
        SystemSpec("Dadras", 3, {"a": 3.0, "b": 2.7, "c": 1.7, "d": 2.0, "h": 9.0}, dadras_rhs,
                   [1.1, 2.1, -2.0], dadras_jac, dt=0.01, period=3.0,
                   reference="Dadras & Momeni 2009"),
        SystemSpec("Chen", 3, {"a": 35.0, "b": 3.0, "c": 28.0}, chen_rhs,
                   [-10.0, 0.0, 37.0], chen_jac, dt=0.002, period=0.5,
                   reference="Chen & Ueta 1999"),
        SystemSpec("SprottB", 3, {}, sprott_b_rhs, [0.5, 0.5, 0.5], sprott_b_jac, dt=0.05,
                   period=6.0, reference="Sprott 1994"),
        SystemSpec("SprottC", 3, {}, sprott_c_rhs, [0.5, 0.5, 0.5], sprott_c_jac, dt=0.05,
                   period=6.0, reference="Sprott 1994"),
        SystemSpec("SprottD", 3, {}, sprott_d_rhs, [0.1, 0.1, 0.1], sprott_d_jac, dt=0.05,
                   period=6.0, reference="Sprott 1994"),
        SystemSpec("SprottE", 3, {}, sprott_e_rhs, [0.5, 0.5, 0.5], sprott_e_jac, dt=0.05,
                   period=6.0, reference="Sprott 1994"),
        SystemSpec("SprottF", 3, {}, sprott_f_rhs, [0.05, 0.05, 0.05], sprott_f_jac, dt=0.05,
                   period=6.0, reference="Sprott 1994"),
        SystemSpec("Rucklidge", 3, {"k": 2.0, "l": 6.7}, rucklidge_rhs, [1.0, 0.0, 4.5],
                   rucklidge_jac, dt=0.02, period=5.0, reference="Rucklidge 1992"),
        SystemSpec("Arneodo", 3, {"a": -5.5, "b": 3.5, "d": -1.0}, arneodo_rhs,
                   [-1.0, 0.0, 1.0], arneodo_jac, dt=0.02, period=3.0,
                   reference="Arneodo, Coullet & Tresser 1981"),
        SystemSpec("Hadley", 3, {"a": 0.25, "b": 4.0, "F": 8.0, "G": 1.0}, hadley_rhs,
                   [0.4, 1.0, 0.5], hadley_jac, dt=0.02, period=4.0, reference="Lorenz 1984"),
        SystemSpec("DuffingLifted", 4,
                   {"delta": 0.3, "alpha": -1.0, "beta": 1.0, "gamma": 0.5, "omega": 1.2},
                   duffing_rhs, [0.5, 0.0, 1.0, 0.0], duffing_jac, dt=0.02, period=5.24,
                   reference="Guckenheimer & Holmes 1983"),
        SystemSpec("MackeyGlass", 1, {"beta": 0.2, "gamma": 0.1, "n": 10.0}, mackey_glass_rhs,
                   [1.0], mackey_glass_jac, delay=17.0, dt=0.5, period=50.0,
                   reference="Mackey & Glass 1977"),
    ]


METADATA_PATH = Path(__file__).with_name("data") / "metadata.json"


def load_metadata(path: Path | None = None) -> dict:
    path = METADATA_PATH if path is None else Path(path)
    return json.loads(path.read_text()) if path.exists() else {}


def apply_metadata(spec: SystemSpec, entry: dict) -> SystemSpec:
    """Aligned copy of ``spec``: integration step, dominant period, attractor state and exponent."""
    al = entry["alignment"]
    return replace(spec, dt=al["dt_integration"], period=al["t_peak"], default_state=entry["default_state"],
                   lyapunov_max=entry["lyapunov_max"], alignment=al,
                   ergodicity_warning=entry.get("ergodicity_warning", False))


def registry(aligned: bool = True) -> list[SystemSpec]:
    """The benchmark registry: seventeen chaotic systems.

    Systems are aligned from the packaged metadata file when it holds an entry
    whose parameter hash matches; otherwise the rough base values are kept.
    """
    specs = base_registry()
    if not aligned:
        return specs
    meta = load_metadata()
    out = []
    for spec in specs:
        entry = meta.get(spec.name)
        out.append(apply_metadata(spec, entry) if entry and entry["param_hash"] == spec.param_hash() else spec)
    return out


def get_system(name: str, aligned: bool = True) -> SystemSpec:
    for spec in registry(aligned):
        if spec.name.lower() == name.lower():
            return spec
    raise KeyError(f"unknown system {name!r}")


def linear_system(matrix, name: str = "Linear", x0=None) -> SystemSpec:
    """Constant-coefficient linear flow, used as an analytic test case."""
    a = np.asarray(matrix, dtype=float)
    d = a.shape[0]
    return SystemSpec(
        name,
        d,
        {},
        lambda x, p: x @ a.T,
        np.ones(d) if x0 is None else x0,
        lambda x, p: np.broadcast_to(a, np.shape(x)[:-1] + (d, d)),
        dt=0.01,
        period=1.0,
    )


def hopf_system(mu: float = 1.0, omega: float = 2.0 * np.pi) -> SystemSpec:
    """Stable limit cycle of radius sqrt(mu) with a contracting third axis."""

    def rhs(x, p):
        a, b, c = _xyz(x)
        r2 = a * a + b * b
        return _stack(mu * a - omega * b - a * r2, omega * a + mu * b - b * r2, -c)

    def jac(x, p):
        a, b, c = _xyz(x)
        z, o = np.zeros_like(a), np.ones_like(a)
        r2 = a * a + b * b
        return _jac(
            [
                [mu - r2 - 2 * a * a, -omega - 2 * a * b, z],
                [omega - 2 * a * b, mu - r2 - 2 * b * b, z],
                [z, z, -o],
            ]
        )

    return SystemSpec("Hopf", 3, {"mu": mu, "omega": omega}, rhs, [np.sqrt(mu), 0.0, 0.0], jac,
                      dt=0.01, period=2 * np.pi / omega)
