"""Explicit-Euler simulation of a swarm passing a tube, with safety monitors."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerConfig, SwarmController, SwarmState
from .exceptions import ConfigError, SafetyViolation
from .potentials import TubeKeepParams
from .tube import (VirtualTube, build_sine_tube, build_tube_from_trajectory,
                   build_tube_from_waypoints, load_tube)

CSV_FMT = "%.9g"
TRAJECTORY_HEADER = ("t", "robot_id", "x", "y", "vx", "vy", "finished")
METRICS_HEADER = ("t", "min_pair_dist", "min_boundary_dist", "V", "Vdot", "finished_count")
PACKAGE_DIR = Path(__file__).resolve().parent


# ------------------------------------------------------------------ scenario
@dataclass
class ScenarioConfig:
    tube: VirtualTube
    positions: np.ndarray
    r_s: np.ndarray
    r_a: np.ndarray
    v_m: np.ndarray
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    dt: float = 0.01
    duration: float = 25.0
    stride: int = 1
    name: str = "scenario"
    stop_when_finished: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if self.stride < 1:
            raise ConfigError("stride must be at least 1")

    def initial_state(self) -> SwarmState:
        return SwarmState(self.positions, self.r_s, self.r_a, self.v_m)

    @property
    def n_robots(self) -> int:
        return len(self.positions)


def _build_tube(cfg: dict, base: Path) -> VirtualTube:
    kind = cfg.get("type", "waypoints")
    spacing = cfg.get("resample_spacing", 0.1)
    if kind == "sine":
        hw = cfg["half_width"]
        if isinstance(hw, dict):
            # half-width pinched smoothly around x = centre
            base_w, pinch, centre, spread = hw["base"], hw.get("pinch", 0.0), hw.get("centre", 0.0), hw.get("spread", 1.0)
            hw_fn = lambda x: base_w - pinch * np.exp(-((x - centre) / spread) ** 2)
        else:
            hw_fn = float(hw)
        return build_sine_tube(cfg["x_length"], cfg["amplitude"], cfg["period"], hw_fn,
                               spacing, origin=cfg.get("origin", (0.0, 0.0)))
    if kind == "waypoints":
        return build_tube_from_waypoints(cfg["waypoints"], cfg["half_widths"], spacing)
    if kind == "trajectory":
        return build_tube_from_trajectory(cfg["trajectory"], cfg.get("obstacles", ()),
                                          cfg.get("clearance_cap", 2.0), spacing)
    if kind == "file":
        return load_tube(resolve_path(cfg["path"], base))
    raise ConfigError(f"unknown tube type {kind!r}")


def resolve_path(path, base: Path | None = None) -> Path:
    """Find ``path`` as given, relative to ``base``, or inside the package data."""
    p = Path(path)
    candidates = [p]
    if base is not None:
        candidates.append(base / p)
    candidates += [PACKAGE_DIR / p, PACKAGE_DIR / p.parent.name / p.name]
    for c in candidates:
        if c.exists():
            return c
    raise FileNotFoundError(f"no such file: {path}")


def _controller_config(cfg: dict) -> ControllerConfig:
    cfg = dict(cfg)
    keep = cfg.pop("tube_keep", None)
    if keep is not None:
        cfg["tube_keep"] = TubeKeepParams(**keep)
    try:
        return ControllerConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad controller options: {exc}") from None


def _robot_positions(cfg: dict, tube: VirtualTube) -> np.ndarray:
    if "positions" in cfg:
        return np.asarray(cfg["positions"], dtype=float).reshape(-1, 2)
    # tube coordinates (s, lam) mapped through the frames
    sl = np.asarray(cfg["tube_coordinates"], dtype=float).reshape(-1, 2)
    fr = tube.frames_at(sl[:, 0])
    return fr["p"] + sl[:, 1:2] * fr["n"]


def scenario_from_dict(data: dict, base: Path | None = None) -> ScenarioConfig:
    base = base or Path.cwd()
    try:
        tube = _build_tube(data["tube"], base)
        robots = data["robots"]
        pos = _robot_positions(robots, tube)
        M = len(pos)
        as_arr = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (M,)).copy()
        return ScenarioConfig(
            tube=tube, positions=pos, r_s=as_arr(robots["r_s"]), r_a=as_arr(robots["r_a"]),
            v_m=as_arr(robots["v_m"]), controller=_controller_config(data.get("controller", {})),
            dt=float(data.get("dt", 0.01)), duration=float(data.get("duration", 25.0)),
            stride=int(data.get("stride", 1)), name=data.get("name", "scenario"),
            stop_when_finished=bool(data.get("stop_when_finished", True)),
        )
    except KeyError as exc:
        raise ConfigError(f"scenario is missing field {exc}") from None


def load_scenario(path) -> ScenarioConfig:
    path = resolve_path(path)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_dict(data, Path(path).parent)


# ------------------------------------------------------------------- checks
@dataclass
class InitialDiagnostics:
    ok: bool
    close_pairs: list = field(default_factory=list)
    outside: list = field(default_factory=list)
    past_finish: list = field(default_factory=list)

    def __bool__(self):
        return self.ok

    def summary(self) -> str:
        if self.ok:
            return "PASS"
        parts = []
        if self.close_pairs:
            parts.append(f"pairs closer than 2 r_s: {self.close_pairs[:10]}")
        if self.outside:
            parts.append(f"safety area not inside tube: robots {self.outside[:10]}")
        if self.past_finish:
            parts.append(f"already at/after finishing line: robots {self.past_finish[:10]}")
        return "FAIL: " + "; ".join(parts)


def validate_initial(config: ScenarioConfig) -> InitialDiagnostics:
    """Safety areas start inside the tube, behind the finish, and disjoint."""
    tube = config.tube
    P = config.positions
    loc = tube.locate(P)
    clearance = tube.boundary_distance(P)
    outside = np.nonzero(~loc["inside"] | (clearance <= config.r_s))[0].tolist()
    past = np.nonzero(loc["l"] >= 0)[0].tolist()
    d = np.linalg.norm(P[:, None] - P[None], axis=2)
    lim = config.r_s[:, None] + config.r_s[None, :]
    ii, jj = np.nonzero(np.triu(d <= lim, k=1))
    pairs = list(zip(ii.tolist(), jj.tolist()))
    return InitialDiagnostics(not (pairs or outside or past), pairs, outside, past)


def safety_minima(tube: VirtualTube, state: SwarmState):
    """Minimum pairwise distance and boundary clearance over unfinished robots.

    Also returns the corresponding margins against ``r_s_i + r_s_j`` and
    ``r_s_i`` so heterogeneous radii are handled.
    """
    active = np.nonzero(~state.finished)[0]
    if len(active) == 0:
        return np.nan, np.nan, np.inf, np.inf
    P = state.positions[active]
    bd = tube.boundary_distance(P)
    bmargin = float(np.min(bd - state.r_s[active]))
    if len(active) > 1:
        d = np.linalg.norm(P[:, None] - P[None], axis=2)
        iu = np.triu_indices(len(active), 1)
        pair = d[iu]
        pmargin = float(np.min(pair - (state.r_s[active][iu[0]] + state.r_s[active][iu[1]])))
        min_pair = float(pair.min())
    else:
        min_pair, pmargin = np.nan, np.inf
    return min_pair, float(bd.min()), pmargin, bmargin


# ---------------------------------------------------------------------- log
@dataclass
class SimulationLog:
    t: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    finished: list = field(default_factory=list)
    min_pair: list = field(default_factory=list)
    min_boundary: list = field(default_factory=list)
    V: list = field(default_factory=list)
    Vdot: list = field(default_factory=list)
    step_ns: list = field(default_factory=list)
    finish_time: np.ndarray | None = None
    ids: np.ndarray | None = None
    dt: float = 0.01
    violation: str | None = None

    def arrays(self) -> dict:
        return {
            "t": np.asarray(self.t), "positions": np.asarray(self.positions),
            "velocities": np.asarray(self.velocities), "finished": np.asarray(self.finished),
            "min_pair": np.asarray(self.min_pair, dtype=float),
            "min_boundary": np.asarray(self.min_boundary, dtype=float),
            "V": np.asarray(self.V, dtype=float), "Vdot": np.asarray(self.Vdot, dtype=float),
            "step_ns": np.asarray(self.step_ns, dtype=np.int64),
        }

    def write_trajectory_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_HEADER)
            for t, P, Vc, F in zip(self.t, self.positions, self.velocities, self.finished):
                for rid, p, v, f in zip(self.ids, P, Vc, F):
                    w.writerow([CSV_FMT % t, int(rid), CSV_FMT % p[0], CSV_FMT % p[1],
                                CSV_FMT % v[0], CSV_FMT % v[1], int(f)])

    def write_metrics_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for t, mp, mb, V, Vd, F in zip(self.t, self.min_pair, self.min_boundary, self.V,
                                           self.Vdot, self.finished):
                w.writerow([CSV_FMT % t, CSV_FMT % mp, CSV_FMT % mb, CSV_FMT % V, CSV_FMT % Vd,
                            int(np.sum(F))])


@dataclass
class MetricsSummary:
    min_pair_dist: float
    min_boundary_dist: float
    all_finished: bool
    finish_times: np.ndarray
    last_finish_time: float
    max_Vdot: float
    max_V_increase: float
    latency_mean_ns: float
    latency_p99_ns: float
    steps: int

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["finish_times"] = [None if np.isnan(x) else float(x) for x in self.finish_times]
        return out


def metrics(log: SimulationLog) -> MetricsSummary:
    if not log.t:
        raise ValueError("empty log")
    a = log.arrays()
    mp = a["min_pair"]
    mb = a["min_boundary"]
    V = a["V"]
    dV = np.diff(V) if len(V) > 1 else np.array([])
    # only compare steps with the same set of unfinished robots
    same = np.all(a["finished"][1:] == a["finished"][:-1], axis=1) if len(V) > 1 else np.array([], bool)
    dV = dV[same & np.isfinite(dV)] if dV.size else dV
    ns = a["step_ns"].ravel()
    ns = ns[ns > 0]
    ft = log.finish_time if log.finish_time is not None else np.full(a["positions"].shape[1], np.nan)
    return MetricsSummary(
        min_pair_dist=float(np.nanmin(mp)) if np.any(np.isfinite(mp)) else np.nan,
        min_boundary_dist=float(np.nanmin(mb)) if np.any(np.isfinite(mb)) else np.nan,
        all_finished=bool(np.all(a["finished"][-1])),
        finish_times=ft,
        last_finish_time=float(np.nanmax(ft)) if np.any(np.isfinite(ft)) else np.nan,
        max_Vdot=float(np.nanmax(a["Vdot"])) if np.any(np.isfinite(a["Vdot"])) else np.nan,
        max_V_increase=float(dV.max()) if dV.size else np.nan,
        latency_mean_ns=float(ns.mean()) if ns.size else np.nan,
        latency_p99_ns=float(np.percentile(ns, 99)) if ns.size else np.nan,
        steps=len(log.t) - 1,
    )


# --------------------------------------------------------------------- run
class Simulator:
    """Steps the swarm with explicit Euler and monitors safety every step."""

    def __init__(self, config: ScenarioConfig, abort_on_violation: bool = True,
                 time_each_robot: bool = False):
        self.config = config
        self.controller = SwarmController(config.tube, config.controller)
        self.abort_on_violation = abort_on_violation
        self.time_each_robot = time_each_robot

    def step(self, state: SwarmState, commands=None) -> SwarmState:
        """Advance one step from a single snapshot; finished flags update after moving."""
        if commands is None:
            commands = self.controller.commands(state)
        v = np.array([c.v_c for c in commands])
        nxt = state.copy()
        nxt.positions = state.positions + self.config.dt * v
        self.controller.update_finished(nxt)
        return nxt

    def _timed_commands(self, state, loc):
        if not self.time_each_robot:
            t0 = time.perf_counter_ns()
            cmds = self.controller.commands(state, loc)
            per = (time.perf_counter_ns() - t0) // max(1, len(state))
            return cmds, [per] * len(state)
        cmds, ns = [], []
        for i in range(len(state)):
            t0 = time.perf_counter_ns()
            cmds.append(self.controller.command(state, i))
            ns.append(time.perf_counter_ns() - t0)
        return cmds, ns

    def run(self) -> SimulationLog:
        cfg = self.config
        diag = validate_initial(cfg)
        if not diag.ok:
            raise ConfigError(f"initial state invalid: {diag.summary()}")
        state = cfg.initial_state()
        tube = cfg.tube
        ctrl = self.controller
        log = SimulationLog(ids=state.ids.copy(), dt=cfg.dt)
        finish_time = np.full(len(state), np.nan)
        n_steps = int(round(cfg.duration / cfg.dt))
        loc = tube.locate(state.positions)
        ctrl.update_finished(state, loc)
        finish_time[state.finished] = 0.0
        full = cfg.controller.variant == "full"
        for k in range(n_steps + 1):
            t = k * cfg.dt
            min_pair, min_bd, pmargin, bmargin = safety_minima(tube, state)
            cmds, ns = self._timed_commands(state, loc)
            V, Vdot = ctrl.lyapunov(state, cmds) if full else (np.nan, np.nan)
            vel = np.array([c.v_c for c in cmds])
            if k % cfg.stride == 0 or k == n_steps or pmargin <= 0 or bmargin <= 0:
                log.t.append(t)
                log.positions.append(state.positions.copy())
                log.velocities.append(vel)
                log.finished.append(state.finished.copy())
                log.min_pair.append(min_pair)
                log.min_boundary.append(min_bd)
                log.V.append(V)
                log.Vdot.append(Vdot)
                log.step_ns.append(ns)
            if pmargin <= 0 or bmargin <= 0:
                what = (f"pairwise distance {min_pair:.4f} <= 2 r_s" if pmargin <= 0
                        else f"boundary distance {min_bd:.4f} <= r_s")
                log.violation = f"t={t:.3f}: {what}"
                if self.abort_on_violation:
                    log.finish_time = finish_time
                    raise SafetyViolation(log.violation, log=log, step=k)
            if k == n_steps or (cfg.stop_when_finished and np.all(state.finished)):
                break
            state.positions = state.positions + cfg.dt * vel
            loc = tube.locate(state.positions)
            newly = (loc["l"] >= -cfg.controller.eps0) & ~state.finished
            finish_time[newly] = t + cfg.dt
            ctrl.update_finished(state, loc)
        log.finish_time = finish_time
        return log


def run(config: ScenarioConfig, **kwargs) -> SimulationLog:
    return Simulator(config, **kwargs).run()
