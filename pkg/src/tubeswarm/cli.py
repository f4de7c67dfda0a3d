"""Command-line entry point.

Exit codes: 0 success, 1 safety violation, 2 configuration error,
3 geometry error. Failures print one line to standard error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baseline_cbf import VARIANTS as BENCH_VARIANTS
from .baseline_cbf import timing_benchmark, write_benchmark_csv
from .exceptions import ConfigError, GeometryError, ImproperTube, SafetyViolation
from .gradcheck import CHECKS, gradient_battery
from .simulator import load_scenario, metrics, resolve_path, run, validate_initial
from .tube import build_tube_from_trajectory, load_tube, save_tube, validate_proper

EXIT_OK, EXIT_SAFETY, EXIT_CONFIG, EXIT_GEOMETRY = 0, 1, 2, 3


def _csv_list(text, cast=str):
    try:
        return [cast(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tubeswarm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-tube", help="check that a tube (or a scenario's tube) is proper")
    p.add_argument("path")
    p.add_argument("--r-s", type=_positive, default=None,
                   help="also report the modified safety radius for this safety radius")

    p = sub.add_parser("run", help="simulate a scenario and write trajectory and metrics CSVs")
    p.add_argument("scenario")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--dt", type=_positive)
    p.add_argument("--duration", type=float)
    p.add_argument("--variant", choices=("modified", "full"))
    p.add_argument("--stride", type=int, help="log every n-th step")

    p = sub.add_parser("teach", help="build a tube from a recorded trajectory and obstacle points")
    p.add_argument("recording", help="JSON with 'trajectory' (and optionally 'obstacles') or x,y CSV")
    p.add_argument("--obstacles", help="x,y CSV or JSON list of obstacle points")
    p.add_argument("--clearance-cap", type=_positive, default=2.0)
    p.add_argument("--spacing", type=_positive, default=0.1)
    p.add_argument("--r-s", type=_positive, default=None, help="store the modified safety radius too")
    p.add_argument("--out", required=True, help="tube JSON to write")

    p = sub.add_parser("bench", help="time our controller against the CBF baseline")
    p.add_argument("--sizes", type=lambda t: _csv_list(t, int), default=[5, 10, 20, 40, 80])
    p.add_argument("--variants", type=_csv_list, default=list(BENCH_VARIANTS))
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--out", default="benchmark.csv")

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("--only", type=_csv_list, default=None,
                   help=f"subset of {','.join(CHECKS)}")
    return ap


# ----------------------------------------------------------------- commands
def _load_any_tube(path):
    path = resolve_path(path)
    data = json.loads(Path(path).read_text())
    if "stations" in data:
        return load_tube(path), None
    cfg = load_scenario(path)
    return cfg.tube, cfg


def cmd_validate_tube(args) -> int:
    tube, cfg = _load_any_tube(args.path)
    diag = validate_proper(tube)
    if not diag.ok:
        raise ImproperTube(f"{args.path}: {diag.summary()}", diag.stations)
    line = f"{args.path}: proper, {tube.n_stations} stations, length {tube.length:.3f} m"
    if args.r_s is not None:
        line += f", r_s'={tube.modified_safety_radius(args.r_s):.6f}"
    print(line)
    if cfg is not None:
        init = validate_initial(cfg)
        if not init.ok:
            raise ConfigError(f"{args.path}: {init.summary()}")
        print(f"{args.path}: initial state {init.summary()}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    changes = {}
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.duration is not None:
        changes["duration"] = args.duration
    if args.stride is not None:
        changes["stride"] = args.stride
    if args.variant is not None:
        changes["controller"] = replace(cfg.controller, variant=args.variant)
    cfg = replace(cfg, **changes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj, met = out / f"{cfg.name}_trajectory.csv", out / f"{cfg.name}_metrics.csv"
    try:
        log = run(cfg)
    except SafetyViolation as exc:
        if exc.log is not None:
            exc.log.write_trajectory_csv(traj)
            exc.log.write_metrics_csv(met)
        raise
    log.write_trajectory_csv(traj)
    log.write_metrics_csv(met)
    m = metrics(log)
    print(f"{cfg.name}: min pair {m.min_pair_dist:.4f} m, min boundary {m.min_boundary_dist:.4f} m, "
          f"all finished {m.all_finished} (last at {m.last_finish_time:.2f} s); wrote {traj}, {met}")
    return EXIT_OK


def _read_points(path) -> np.ndarray:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        return np.asarray(data, dtype=float).reshape(-1, 2)
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)


def _is_number(x):
    try:
        float(x)
    except ValueError:
        return False
    return True


def cmd_teach(args) -> int:
    path = Path(args.recording)
    obstacles = np.zeros((0, 2))
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        if isinstance(data, dict):
            traj = np.asarray(data["trajectory"], dtype=float)
            obstacles = np.asarray(data.get("obstacles", []), dtype=float).reshape(-1, 2)
        else:
            traj = np.asarray(data, dtype=float)
    else:
        traj = _read_points(path)
    if args.obstacles:
        obstacles = _read_points(args.obstacles)
    tube = build_tube_from_trajectory(traj, obstacles, args.clearance_cap, args.spacing)
    save_tube(tube, args.out, args.r_s)
    print(f"wrote {args.out}: {tube.n_stations} stations, length {tube.length:.3f} m, "
          f"half-width {tube.r_t.min():.3f}..{tube.r_t.max():.3f} m")
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = timing_benchmark(sizes=tuple(args.sizes), variants=tuple(args.variants), steps=args.steps)
    write_benchmark_csv(rows, args.out)
    for r in rows:
        print(f"M={r['M']:<4d} {r['variant']:<22s} mean {r['mean_step_ns'] / 1e3:10.1f} us  "
              f"p99 {r['p99_step_ns'] / 1e3:10.1f} us  infeasible {r['infeasible_steps']}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    unknown = set(args.only or ()) - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {list(CHECKS)}")
    for name, err in gradient_battery(args.only).items():
        print(f"{name:<16s} max relative error {err:.3e}")
    return EXIT_OK


COMMANDS = {
    "validate-tube": cmd_validate_tube,
    "run": cmd_run,
    "teach": cmd_teach,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SafetyViolation as exc:
        print(f"safety violation: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
