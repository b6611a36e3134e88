"""Builds the packaged per-system metadata: alignment, attractor state, exponents.

Run ``python -m chaosbench.metadata`` to regenerate ``data/metadata.json``.
"""

from __future__ import annotations

import json
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

from .alignment import align_system
from .dynamics import SystemSpec, current_state, sample_attractor
from .lyapunov import ErgodicityWarning, ensemble_lyapunov_estimate, ergodicity_check, two_route_lyapunov
from .systems import METADATA_PATH, base_registry


class AdmissionError(RuntimeError):
    """A candidate system failed the chaos check."""


def build_entry(spec: SystemSpec, seed: int = 0) -> dict:
    al = align_system(spec, seed)
    aligned = replace(spec, dt=al.dt_integration, period=al.t_peak)
    state = current_state(sample_attractor(aligned, seed))
    aligned = replace(aligned, default_state=state)
    routes = two_route_lyapunov(aligned, seed=seed)
    if not (routes.qr_matched > 0 and routes.naive > 0):
        raise AdmissionError(f"{spec.name}: largest exponent is not positive")
    long = ensemble_lyapunov_estimate(aligned, "long", seed=seed)
    short = ensemble_lyapunov_estimate(aligned, "short", seed=seed + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ErgodicityWarning)
        ok = ergodicity_check(long, short)
    return {
        "param_hash": spec.param_hash(),
        "alignment": asdict(al),
        "default_state": [float(v) for v in state],
        "lyapunov_max": long.lyapunov_max,
        "lyapunov_spectrum": [float(v) for v in long.spectrum],
        "lyapunov_long_stderr": long.stderr,
        "lyapunov_short": short.lyapunov_max,
        "lyapunov_short_stderr": short.stderr,
        "two_route": {"qr": routes.qr_matched, "naive": routes.naive, "agree": routes.agree},
        "ergodicity_warning": not ok,
    }


def build_metadata(path: Path = METADATA_PATH, names=None, seed: int = 0) -> dict:
    path = Path(path)
    data = json.loads(path.read_text()) if path.exists() else {}
    for spec in base_registry():
        if names and spec.name not in names:
            continue
        data[spec.name] = build_entry(spec, seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        print(spec.name, round(data[spec.name]["alignment"]["t_peak"], 4), round(data[spec.name]["lyapunov_max"], 4),
              flush=True)
    return data


if __name__ == "__main__":
    build_metadata(names=sys.argv[1:] or None)
