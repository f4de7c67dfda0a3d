"""CBF-QP baseline controller and the compute-time benchmark.

The nominal command is the line-approaching velocity ``v_m t_c``; robot
avoidance and tube keeping become linear constraints ``grad_h . u >= -gamma h``
with the squared-distance barriers

* pairs: ``h = |p_i - p_j|^2 - (2 r_s)^2``
* boundary (when ``d_t < r_a``): ``h = d_t^2 - r_s'^2``.

In the distributed variant each robot solves a 2-D QP and takes half of each
pairwise constraint. The centralized variant stacks all robots into one QP,
solved with cvxopt. The speed cap is applied by radial scaling afterwards.
"""
from __future__ import annotations

import csv
import gc
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import ControlCommand, ControllerConfig, SwarmController, SwarmState
from .exceptions import ConfigError, Infeasible
from .potentials import distance_error_gradient
from .tube import VirtualTube, build_tube_from_waypoints

FEAS_TOL = 1e-10
BENCH_HEADER = ("M", "variant", "mean_step_ns", "p99_step_ns", "infeasible_steps")
VARIANTS = ("ours-distributed", "ours-centralized-sum", "cbf-distributed", "cbf-centralized")


@dataclass(frozen=True)
class CBFParams:
    gamma: float = 1.0
    share: float = 0.5

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if not (0 < self.share <= 1):
            raise ConfigError("share must lie in (0, 1]")


@dataclass
class QpProblem:
    """``min |u - u_nom|^2`` subject to ``normals @ u >= offsets``."""

    u_nom: np.ndarray
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_m: float = np.inf

    def __post_init__(self):
        self.u_nom = np.asarray(self.u_nom, dtype=float)
        self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 2)
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if len(self.normals) != len(self.offsets):
            raise ValueError("one offset per constraint row")
        if not (np.all(np.isfinite(self.normals)) and np.all(np.isfinite(self.offsets))):
            raise ValueError("constraint rows must be finite")

    def feasible(self, u, tol=FEAS_TOL) -> np.ndarray:
        u = np.atleast_2d(u)
        scale = np.maximum(1.0, np.abs(self.offsets))
        return np.all(u @ self.normals.T >= self.offsets - tol * scale, axis=-1)


def active_set_solve(problem: QpProblem) -> np.ndarray:
    """Exact minimiser of a 2-D QP with linear constraints.

    In two dimensions the optimum has at most two active rows, so the
    candidates are the nominal point, its projection onto each row's line
    and the intersection of every non-parallel pair. The closest feasible
    candidate is optimal.
    """
    u0 = problem.u_nom
    A, b = problem.normals, problem.offsets
    if len(A) == 0 or problem.feasible(u0)[0]:
        return u0.copy()
    nrm2 = np.einsum("ij,ij->i", A, A)
    keep = nrm2 > 0
    if np.any(~keep & (b > FEAS_TOL)):
        raise Infeasible("zero-normal row with positive offset")
    A, b, nrm2 = A[keep], b[keep], nrm2[keep]
    cands = [u0 + ((b - A @ u0) / nrm2)[:, None] * A]
    if len(A) > 1:
        i, j = np.triu_indices(len(A), 1)
        det = A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0]
        ok = np.abs(det) > 1e-12 * np.sqrt(nrm2[i] * nrm2[j])
        i, j, det = i[ok], j[ok], det[ok]
        x = (b[i] * A[j, 1] - b[j] * A[i, 1]) / det
        y = (A[i, 0] * b[j] - A[j, 0] * b[i]) / det
        cands.append(np.column_stack([x, y]))
    cands = np.concatenate(cands)
    sub = QpProblem(u0, A, b)
    good = cands[sub.feasible(cands)]
    if len(good) == 0:
        raise Infeasible(f"{len(A)} constraint rows have no common solution")
    dist = np.einsum("ij,ij->i", good - u0, good - u0)
    return good[int(np.argmin(dist))].copy()


def cap_speed(u, v_m):
    n = float(np.hypot(u[0], u[1]))
    return u if n <= v_m else u * (v_m / n)


class CBFSwarmController:
    """Per-robot QP rows and solves on top of the same tube queries as the main controller."""

    def __init__(self, tube: VirtualTube, config: ControllerConfig | None = None,
                 params: CBFParams | None = None):
        self.tube = tube
        self.params = params or CBFParams()
        self.base = SwarmController(tube, config or ControllerConfig())
        self.r_s_prime: dict = {}

    def _rs_prime(self, r_s):
        key = float(r_s)
        if key not in self.r_s_prime:
            self.r_s_prime[key] = self.tube.modified_safety_radius(key)
        return self.r_s_prime[key]

    def problem(self, state: SwarmState, i: int, share: float | None = None) -> tuple:
        """Nominal command and constraint rows of robot ``i``.

        Pair rows are returned separately (with the partner index) so the
        centralized solver can couple them.
        """
        share = self.params.share if share is None else share
        gamma = self.params.gamma
        p = state.positions[i]
        loc = {k: v[0] for k, v in self.tube.locate(p[None, :]).items()}
        u_nom = state.v_m[i] * loc["t_c"]
        nbr = self.base.neighbor_set(state, i)
        rel = p - state.positions[nbr]
        h_pair = np.einsum("ij,ij->i", rel, rel) - (state.r_s[i] + state.r_s[nbr]) ** 2
        pair_rows = (2.0 * rel, -gamma * share * h_pair, nbr)
        rows_a, rows_b = [], []
        if loc["d_t"] < state.r_a[i]:
            grad = distance_error_gradient(self.tube, p, loc)
            if grad is not None:
                rsp = self._rs_prime(state.r_s[i])
                d_t = float(loc["d_t"])
                rows_a.append(2.0 * d_t * grad)
                rows_b.append(-gamma * (d_t * d_t - rsp * rsp))
        tube_rows = (np.array(rows_a).reshape(-1, 2), np.array(rows_b))
        return u_nom, pair_rows, tube_rows, loc

    def command(self, state: SwarmState, i: int) -> tuple:
        """Distributed QP command of robot ``i``; returns ``(u, infeasible)``."""
        v_m = float(state.v_m[i])
        if state.finished[i]:
            loc = self.tube.locate(state.positions[i][None, :])
            return v_m * loc["t_c"][0], False
        u_nom, (pa, pb, _), (ta, tb), _ = self.problem(state, i)
        prob = QpProblem(u_nom, np.concatenate([pa, ta]), np.concatenate([pb, tb]), v_m)
        try:
            u = active_set_solve(prob)
        except Infeasible:
            return np.zeros(2), True
        return cap_speed(u, v_m), False

    def centralized(self, state: SwarmState) -> tuple:
        """One QP over all unfinished robots; returns ``(U, infeasible)``."""
        from cvxopt import matrix, solvers

        M = len(state)
        U = np.zeros((M, 2))
        active = np.nonzero(~state.finished)[0]
        for i in np.nonzero(state.finished)[0]:
            U[i] = state.v_m[i] * self.tube.locate(state.positions[i][None, :])["t_c"][0]
        if len(active) == 0:
            return U, False
        index = {int(i): k for k, i in enumerate(active)}
        n = 2 * len(active)
        q = np.zeros(n)
        G_rows, h_rows = [], []
        for i in active:
            k = index[int(i)]
            u_nom, (pa, pb, nbr), (ta, tb), _ = self.problem(state, i, share=1.0)
            q[2 * k:2 * k + 2] = -2.0 * u_nom
            for a, b_, j in zip(pa, pb, nbr):
                if int(j) < int(i):
                    continue  # each pair once, coupling both robots
                row = np.zeros(n)
                row[2 * k:2 * k + 2] = -a
                row[2 * index[int(j)]:2 * index[int(j)] + 2] = a
                G_rows.append(row)
                h_rows.append(-b_)
            for a, b_ in zip(ta, tb):
                row = np.zeros(n)
                row[2 * k:2 * k + 2] = -a
                G_rows.append(row)
                h_rows.append(-b_)
        if not G_rows:
            x = -0.5 * q
        else:
            solvers.options["show_progress"] = False
            sol = solvers.qp(matrix(2.0 * np.eye(n)), matrix(q), matrix(np.array(G_rows)),
                             matrix(np.array(h_rows)))
            if sol["status"] != "optimal":
                for i in active:
                    U[i] = 0.0
                return U, True
            x = np.array(sol["x"]).ravel()
        for i in active:
            k = index[int(i)]
            U[i] = cap_speed(x[2 * k:2 * k + 2], float(state.v_m[i]))
        return U, False


def cbf_command(tube, state, i, params: CBFParams | None = None,
                config: ControllerConfig | None = None) -> ControlCommand:
    """Distributed CBF command wrapped like the main controller's output."""
    ctl = CBFSwarmController(tube, config, params)
    u, infeasible = ctl.command(state, i)
    zero = np.zeros(2)
    cmd = ControlCommand(u, zero, zero, zero, 1.0)
    cmd.barrier_values["infeasible"] = infeasible
    return cmd


# ---------------------------------------------------------------- benchmark
def benchmark_scenario(M: int, rows: int = 5, spacing: float = 1.0):
    """Deterministic grid of ``M`` robots in a straight tube, speed groups by column."""
    cols = int(np.ceil(M / rows))
    half = 0.5 * (rows - 1) * spacing + 1.0
    length = cols * spacing + 12.0
    tube = build_tube_from_waypoints([[0.0, 0.0], [length, 0.0]], half)
    speeds = [3.0, 2.3, 1.6, 0.9]
    pos, vm = [], []
    for k in range(M):
        c, r = divmod(k, rows)
        pos.append([1.0 + (cols - 1 - c) * spacing, (r - 0.5 * (rows - 1)) * spacing])
        vm.append(speeds[c % len(speeds)])
    state = SwarmState(pos, 0.4, 0.8, vm)
    return tube, state


def _p99(x):
    return float(np.percentile(x, 99)) if len(x) else float("nan")


def timing_benchmark(sizes=(5, 10, 20, 40, 80), variants=VARIANTS, steps: int = 30,
                     dt: float = 0.01, config: ControllerConfig | None = None,
                     params: CBFParams | None = None) -> list:
    """Closed-loop runs of each variant; returns benchmark rows as dicts.

    Distributed variants report the mean time of one robot's command. The
    centralized variants report the time to produce every robot's command
    in a step: one batched evaluation of our control law, or one coupled QP.
    All variants advance in lockstep, each on its own state, so background
    load on the machine hits them alike. Garbage collection is paused while
    timing.
    """
    config = config or ControllerConfig()
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    out = []
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        for M in sizes:
            tube, state0 = benchmark_scenario(M)
            tube.modified_safety_radius(0.4)
            ours = SwarmController(tube, config)
            cbf = CBFSwarmController(tube, config, params)
            states = {v: state0.copy() for v in variants}
            samples = {v: [] for v in variants}
            infeasible = dict.fromkeys(variants, 0)
            for _ in range(steps):
                for variant in variants:
                    state = states[variant]
                    vel = np.zeros((M, 2))
                    if variant == "ours-distributed":
                        for i in range(M):
                            t0 = time.perf_counter_ns()
                            vel[i] = ours.command(state, i).v_c
                            samples[variant].append(time.perf_counter_ns() - t0)
                    elif variant == "ours-centralized-sum":
                        t0 = time.perf_counter_ns()
                        vel = np.array([cmd.v_c for cmd in ours.commands(state)])
                        samples[variant].append(time.perf_counter_ns() - t0)
                    elif variant == "cbf-distributed":
                        bad = False
                        for i in range(M):
                            t0 = time.perf_counter_ns()
                            vel[i], flag = cbf.command(state, i)
                            samples[variant].append(time.perf_counter_ns() - t0)
                            bad |= flag
                        infeasible[variant] += int(bad)
                    else:
                        t0 = time.perf_counter_ns()
                        vel, flag = cbf.centralized(state)
                        samples[variant].append(time.perf_counter_ns() - t0)
                        infeasible[variant] += int(flag)
                    state.positions = state.positions + dt * vel
                    ours.update_finished(state)
                gc.collect()
            for variant in variants:
                out.append({"M": M, "variant": variant,
                            "mean_step_ns": float(np.mean(samples[variant])),
                            "p99_step_ns": _p99(samples[variant]),
                            "infeasible_steps": infeasible[variant]})
    finally:
        if gc_was_on:
            gc.enable()
    return out


def growth_rate(rows: list, variant: str) -> float:
    """Least-squares slope of mean step time (ns) against swarm size."""
    pts = [(r["M"], r["mean_step_ns"]) for r in rows if r["variant"] == variant]
    if len(pts) < 2:
        raise ValueError("need at least two sizes")
    M, t = np.array(pts, dtype=float).T
    return float(np.polyfit(M, t, 1)[0])


def write_benchmark_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in rows:
            w.writerow([r["M"], r["variant"], "%.9g" % r["mean_step_ns"], "%.9g" % r["p99_step_ns"],
                        r["infeasible_steps"]])
