"""Command-line entry point: ``chaosbench <command>``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .metrics import catalog
from .models import ModelKind


def _systems(names):
    from .systems import get_system, registry

    if not names or names == ["all"]:
        return registry()
    return [get_system(n) for n in names]


def _models(names):
    if not names or names == ["all"]:
        return list(ModelKind)
    return [ModelKind.parse(n) for n in names]


def _config(args):
    from .harness import ExperimentConfig

    base = ExperimentConfig.from_json_file(args.config).to_dict() if getattr(args, "config", None) else {}
    if getattr(args, "seeds", None):
        base["seeds"] = args.seeds
    if getattr(args, "no_invariants", False):
        base["invariants"] = False
    if getattr(args, "metrics", None):
        base["metrics"] = args.metrics
    return ExperimentConfig.from_dict(base)


def cmd_list_systems(args) -> int:
    from .systems import registry

    for spec in registry():
        d = spec.describe()
        lam = d.get("lyapunov_max")
        lam = "-" if lam is None else f"{lam:.4g}"
        print(f"{d['name']:<14} dim={d['dim']}  t_peak={d['t_peak']:.4g}  dt={d['dt']:.4g}  lambda_max={lam}")
    return 0


def cmd_align(args) -> int:
    from .alignment import aligned, align_system
    from .systems import get_system

    spec = get_system(args.system, aligned=False)
    res = align_system(spec, args.seed) if args.no_cache else aligned(spec, args.seed)
    d = asdict(res)
    if not args.full:
        d.pop("significant_frequencies")
    print(json.dumps(d, indent=1))
    return 0


def cmd_invariants(args) -> int:
    from .invariants import compute_invariants
    from .systems import get_system

    inv = compute_invariants(get_system(args.system), args.seed, n_traj=args.n_traj, n_steps=args.n_steps,
                             check_ergodicity=args.ergodicity)
    if args.json:
        print(inv.to_json())
        return 0
    print("system,lambda_max,D2,D_KY,E")
    print(f"{inv.system},{inv.lyapunov_max!r},{inv.corr_dim!r},{inv.ky_dim!r},{inv.mse!r}")
    return 0


def cmd_benchmark(args) -> int:
    from .harness import run_campaign

    config = _config(args)
    recs = run_campaign(config, _systems(args.systems), _models(args.models), args.out, workers=args.workers)
    failed = [r for r in recs if r.error is not None]
    print(f"{len(recs)} records written to {args.out} ({len(failed)} failed)")
    return 0


def cmd_titrate(args) -> int:
    from .harness import titrate_history
    from .systems import get_system

    config = _config(args)
    pts = titrate_history(get_system(args.system), args.model, config, args.lengths, args.seeds)
    print("history_points,median_sMAPE_1lt,skipped")
    for p in pts:
        print(f"{p.history_points},{p.median!r},{p.skipped or ''}")
    return 0


def cmd_analyze(args) -> int:
    from .analysis import analyze

    summary = analyze(args.dir, n_bootstrap=args.n_bootstrap)
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def cmd_metrics(args) -> int:
    for row in catalog():
        print(f"{row['metric']:<13} range=[{row['low']}, {row['high']}]  {row['orientation']} is better")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaosbench", description="Forecasting benchmark on chaotic systems.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("list-systems", help="registry with aligned timescales")
    s.set_defaults(func=cmd_list_systems)

    s = sub.add_parser("align", help="dominant timescale of a system")
    s.add_argument("system")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-cache", action="store_true")
    s.add_argument("--full", action="store_true", help="include significant frequencies")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("invariants", help="Lyapunov spectrum, dimensions and entropy")
    s.add_argument("system")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-traj", type=int, default=20)
    s.add_argument("--n-steps", type=int, default=5000)
    s.add_argument("--ergodicity", action="store_true", help="also run the short ensemble check")
    s.add_argument("--json", action="store_true", help="full InvariantSet as JSON instead of a CSV row")
    s.set_defaults(func=cmd_invariants)

    def campaign_args(s):
        s.add_argument("--config", help="JSON file mirroring ExperimentConfig")
        s.add_argument("--seeds", type=int, nargs="+")
        s.add_argument("--metrics", nargs="+")
        s.add_argument("--no-invariants", action="store_true")

    s = sub.add_parser("benchmark", help="run a (resumable) campaign")
    s.add_argument("--systems", nargs="+", default=["all"])
    s.add_argument("--models", nargs="+", default=["all"])
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--workers", type=int, help="parallel triples (default: CHAOSBENCH_WORKERS or 1)")
    campaign_args(s)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("titrate", help="error against training history length")
    s.add_argument("system")
    s.add_argument("model")
    s.add_argument("--lengths", type=int, nargs="+", default=[100, 250, 500, 1000])
    campaign_args(s)
    s.set_defaults(func=cmd_titrate)

    s = sub.add_parser("analyze", help="analysis tables for a campaign directory")
    s.add_argument("dir", type=Path)
    s.add_argument("--n-bootstrap", type=int, default=500)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("metrics", help="metric catalog")
    s.add_argument("action", choices=["list"])
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
