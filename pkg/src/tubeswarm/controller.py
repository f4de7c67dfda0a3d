"""Distributed swarm controllers for passing a curve virtual tube.

Each robot's command is ``v_c = -sat(line + avoidance + tube_keeping, v_m)``.
The two variants differ in the line and tube terms:

``full``
    ``line = sat(k1 l eta t_c, v_m)`` (gradient of the line-integral
    Lyapunov function) and tube keeping from the single-panel boundary
    barriers.
``modified``
    the finishing line is moved forward by ``rho`` so the line term is the
    constant ``-v_m t_c``, and tube keeping is the part of the unified
    barrier gradient orthogonal to ``t_c``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .exceptions import CoincidentPositions, ConfigError
from .potentials import (AvoidanceParams, TubeKeepParams, avoidance_term, pair_barrier_profile,
                         boundary_barrier_value, line_integral_lyapunov, tube_boundary_barriers,
                         unified_barrier_profile)
from .scalar_fields import kappa as sat_kappa
from .tube import VirtualTube

VARIANTS = ("modified", "full")


@dataclass(frozen=True)
class RobotParams:
    r_s: float
    r_a: float
    v_m: float
    robot_id: int = 0

    def __post_init__(self):
        if not (0 < self.r_s < self.r_a):
            raise ConfigError(f"robot {self.robot_id}: need 0 < r_s < r_a")
        if self.v_m <= 0:
            raise ConfigError(f"robot {self.robot_id}: v_m must be positive")


@dataclass
class SwarmState:
    """Positions and per-robot parameters; ``finished`` latches once set."""

    positions: np.ndarray
    r_s: np.ndarray
    r_a: np.ndarray
    v_m: np.ndarray
    finished: np.ndarray = None
    ids: np.ndarray = None

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 2)
        M = len(self.positions)
        self.r_s = np.broadcast_to(np.asarray(self.r_s, dtype=float), (M,)).copy()
        self.r_a = np.broadcast_to(np.asarray(self.r_a, dtype=float), (M,)).copy()
        self.v_m = np.broadcast_to(np.asarray(self.v_m, dtype=float), (M,)).copy()
        if self.finished is None:
            self.finished = np.zeros(M, dtype=bool)
        self.finished = np.asarray(self.finished, dtype=bool).copy()
        if self.ids is None:
            self.ids = np.arange(M)
        if np.any(self.r_s <= 0) or np.any(self.r_a <= self.r_s):
            raise ConfigError("need 0 < r_s < r_a for every robot")
        if np.any(self.v_m <= 0):
            raise ConfigError("v_m must be positive for every robot")

    @classmethod
    def from_robots(cls, positions, robots: Sequence[RobotParams]) -> "SwarmState":
        return cls(positions, [r.r_s for r in robots], [r.r_a for r in robots],
                   [r.v_m for r in robots], ids=np.array([r.robot_id for r in robots]))

    def __len__(self):
        return len(self.positions)

    def copy(self) -> "SwarmState":
        return SwarmState(self.positions.copy(), self.r_s, self.r_a, self.v_m,
                          self.finished.copy(), self.ids.copy())

    def robot(self, i) -> RobotParams:
        return RobotParams(float(self.r_s[i]), float(self.r_a[i]), float(self.v_m[i]), int(self.ids[i]))


@dataclass(frozen=True)
class ControllerConfig:
    """Gains and options. Radii come from the robots, not from here."""

    variant: str = "modified"
    k1: float = 1.0
    k2: float = 1.0
    k3: float = 1.0
    eps_m: float = 1e-6
    eps_t: float = 1e-6
    eps_s: float = 1e-6
    rho: float | None = None
    eps0: float = 0.1
    tube_keep: TubeKeepParams | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.k1 <= 0:
            raise ConfigError("k1 must be positive")
        if self.eps0 <= 0:
            raise ConfigError("eps0 must be positive")

    def finish_offset(self, tube: VirtualTube, v_m_max: float) -> float:
        need = v_m_max / (self.k1 * tube.eta_min)
        if self.rho is None:
            return need
        if self.rho < need:
            raise ConfigError(f"rho={self.rho} below v_m/(k1 eta_min)={need:.4g}")
        return float(self.rho)


@dataclass
class ControlCommand:
    v_c: np.ndarray
    line_approaching: np.ndarray
    robot_avoidance: np.ndarray
    tube_keeping: np.ndarray
    kappa: float
    neighbors: tuple = ()
    barrier_values: dict = field(default_factory=dict)

    @property
    def stack(self) -> np.ndarray:
        return self.line_approaching + self.robot_avoidance + self.tube_keeping


# finite-difference probes for the tube-width and midline gradients
_PROBE_STEP = 1e-6
_PROBE_OFFSETS = _PROBE_STEP * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def _saturate(v, v_m):
    k = sat_kappa(v, v_m)
    return k * v, k


class SwarmController:
    """Evaluates the distributed commands of every robot for one tube."""

    def __init__(self, tube: VirtualTube, config: ControllerConfig | None = None):
        self.tube = tube
        self.config = config or ControllerConfig()
        self._avoid: dict = {}
        self._keep: dict = {}

    # ------------------------------------------------------------ parameters
    def avoidance_params(self, r_s, r_a) -> AvoidanceParams:
        key = (float(r_s), float(r_a))
        if key not in self._avoid:
            c = self.config
            self._avoid[key] = AvoidanceParams(c.k2, c.eps_m, c.eps_s, key[0], key[1])
        return self._avoid[key]

    def tube_params(self, r_s, r_a) -> TubeKeepParams:
        key = (float(r_s), float(r_a))
        if key not in self._keep:
            c = self.config
            if c.tube_keep is None:
                params = TubeKeepParams(c.k3, c.eps_t, c.eps_s, r_s=key[0], r_a=key[1])
            else:
                params = replace(c.tube_keep, k3=c.k3, eps_t=c.eps_t, eps_s=c.eps_s,
                                 r_s=key[0], r_a=key[1])
            if params.r_s_prime is None and c.variant == "modified":
                params = replace(params, r_s_prime=self.tube.modified_safety_radius(key[0]))
            if params.r_s_prime is not None and not params.r_s_prime < params.r_a:
                raise ConfigError(f"modified safety radius {params.r_s_prime:.4g} must be below r_a={key[1]}")
            self._keep[key] = params
        return self._keep[key]

    # --------------------------------------------------------------- queries
    def update_finished(self, state: SwarmState, loc=None) -> np.ndarray:
        """Latch robots whose length reached ``-eps0``; returns the new flags."""
        if loc is None:
            loc = self.tube.locate(state.positions)
        state.finished |= loc["l"] >= -self.config.eps0
        return state.finished

    def is_finished(self, p) -> bool:
        return bool(self.tube.locate(np.asarray(p, dtype=float)[None, :])["l"][0] >= -self.config.eps0)

    @staticmethod
    def neighbor_set(state: SwarmState, i: int) -> np.ndarray:
        rel = state.positions - state.positions[i]
        d = np.hypot(rel[:, 0], rel[:, 1])
        mask = (d <= state.r_a[i] + state.r_s) & ~state.finished
        mask[i] = False
        return np.nonzero(mask)[0]

    # -------------------------------------------------------------- commands
    def commands(self, state: SwarmState, loc=None) -> list:
        """Commands for all robots from one snapshot.

        Evaluated in batch: one projection for all robots, all pairwise
        barriers at once. Each robot's result still depends only on its own
        position and its neighbours, exactly as :meth:`command` computes it.
        """
        if loc is None:
            loc = self.tube.locate(state.positions)
        if self.config.variant == "full":
            return [self._command(state, i, _row(loc, i), None) for i in range(len(state))]
        return self._commands_modified_batch(state, loc)

    def _avoidance_batch(self, state):
        P = state.positions
        M = len(P)
        diff = P[:, None, :] - P[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        link = (d <= state.r_a[:, None] + state.r_s[None, :]) & ~state.finished[None, :]
        link &= ~state.finished[:, None]
        np.fill_diagonal(link, False)
        if np.any(link & (d == 0.0)):
            raise CoincidentPositions("robots occupy the same position")
        terms = np.zeros((M, 2))
        values = np.zeros(M)
        for key in set(zip(state.r_s.tolist(), state.r_a.tolist())):
            params = self.avoidance_params(*key)
            rows = (state.r_s == key[0]) & (state.r_a == key[1])
            act = link & rows[:, None] & (d < params.cutoff)
            ii, jj = np.nonzero(act)
            if len(ii) == 0:
                continue
            val, deriv = pair_barrier_profile(d[ii, jj], params)
            b = -deriv / d[ii, jj]
            np.add.at(terms, ii, -b[:, None] * diff[ii, jj])
            np.add.at(values, ii, val)
        return terms, values, link

    def _commands_modified_batch(self, state, loc):
        c = self.config
        M = len(state)
        t_c = loc["t_c"]
        v_m = state.v_m
        rho = c.finish_offset(self.tube, float(np.max(v_m)))
        raw = (c.k1 * (loc["l"] - rho) * loc["eta"])[:, None] * t_c
        line = _saturate_rows(raw, v_m)[0]
        avoid, pair_vals, link = self._avoidance_batch(state)
        keep = np.zeros((M, 2))
        tube_vals = np.zeros(M)
        need = np.nonzero(~state.finished & (loc["d_t"] < state.r_a))[0]
        if len(need):
            h = 1e-6
            offs = np.array([[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
            q = self.tube.locate((state.positions[need][:, None, :] + offs[None]).reshape(-1, 2))
            r_t = q["r_t"].reshape(-1, 4)
            mid = q["mid"].reshape(-1, 4, 2)
            dr = np.column_stack([r_t[:, 0] - r_t[:, 1], r_t[:, 2] - r_t[:, 3]]) / (2 * h)
            # dm[n, a, b] = d mid_a / d p_b
            dm = np.stack([mid[:, 0] - mid[:, 1], mid[:, 2] - mid[:, 3]], axis=2) / (2 * h)
            rel = state.positions[need] - loc["mid"][need]
            dist = np.hypot(rel[:, 0], rel[:, 1])
            ok = dist > 1e-12
            u = np.where(ok[:, None], rel / np.where(ok, dist, 1.0)[:, None], 0.0)
            grad_d = dr - u + np.einsum("na,nab->nb", u, dm)
            d_t = loc["d_t"][need]
            deriv = np.zeros(len(need))
            for key in set(zip(state.r_s[need].tolist(), state.r_a[need].tolist())):
                params = self.tube_params(*key)
                rows = (state.r_s[need] == key[0]) & (state.r_a[need] == key[1])
                val, der = unified_barrier_profile(np.maximum(d_t[rows], 1e-12), params.r_s_prime, params)
                tube_vals[need[rows]] = np.where(d_t[rows] > 0, val, np.inf)
                deriv[rows] = der
            cvec = np.where(ok[:, None], deriv[:, None] * grad_d, 0.0)
            tc = t_c[need]
            keep[need] = cvec - np.einsum("ij,ij->i", cvec, tc)[:, None] * tc
        stack = line + avoid + keep
        v_c, kap = _saturate_rows(-stack, v_m)
        out = []
        for i in range(M):
            if state.finished[i]:
                out.append(ControlCommand(v_m[i] * t_c[i], -v_m[i] * t_c[i], np.zeros(2), np.zeros(2), 1.0))
                continue
            out.append(ControlCommand(v_c[i], line[i], avoid[i], keep[i], float(kap[i]),
                                      tuple(np.nonzero(link[i])[0].tolist()),
                                      {"pair": float(pair_vals[i]), "tube": float(tube_vals[i])}))
        return out

    def command(self, state: SwarmState, i: int) -> ControlCommand:
        """Command of robot ``i`` using only its own projection and neighbours."""
        p = state.positions[i]
        if self.config.variant != "modified" or state.finished[i]:
            loc = self.tube.locate(p[None, :])
            return self._command(state, i, _row(loc, 0), None)
        # the robot and its four probes share one projection call
        q = self.tube.locate(np.vstack([p, p + _PROBE_OFFSETS]))
        probe = None
        if q["d_t"][0] < state.r_a[i]:
            probe = {k: v[1:] for k, v in q.items()}
        return self._command(state, i, _row(q, 0), probe)

    def velocities(self, state: SwarmState, loc=None) -> np.ndarray:
        return np.array([c.v_c for c in self.commands(state, loc)])

    def _probe_locations(self, state, loc, only=None):
        """Projection of the four finite-difference probes around robots near the boundary."""
        if self.config.variant != "modified":
            return {}
        rows = [only] if only is not None else range(len(state))
        need = []
        for k, i in enumerate(rows):
            j = 0 if only is not None else i
            if not state.finished[i] and loc["d_t"][j] < state.r_a[i]:
                need.append(i)
        if not need:
            return {}
        pts = (state.positions[need][:, None, :] + _PROBE_OFFSETS[None]).reshape(-1, 2)
        q = self.tube.locate(pts)
        return {i: {k: v[4 * n:4 * n + 4] for k, v in q.items()} for n, i in enumerate(need)}

    def _command(self, state, i, loc_i, probe) -> ControlCommand:
        c = self.config
        p = state.positions[i]
        v_m = float(state.v_m[i])
        t_c = loc_i["t_c"]
        zero = np.zeros(2)
        if state.finished[i]:
            line = -v_m * t_c
            return ControlCommand(v_m * t_c, line, zero, zero, 1.0)

        nbr = self.neighbor_set(state, i)
        avoid_params = self.avoidance_params(state.r_s[i], state.r_a[i])
        avoid, v_pair = avoidance_term(p, state.positions[nbr], avoid_params)
        values = {"pair": v_pair}

        if c.variant == "modified":
            rho = c.finish_offset(self.tube, float(np.max(state.v_m)))
            l_shift = loc_i["l"] - rho
            line, _ = _saturate(c.k1 * l_shift * loc_i["eta"] * t_c, v_m)
            keep = self._lateral_barrier(state, i, loc_i, probe, values)
        else:
            line, _ = _saturate(c.k1 * loc_i["l"] * loc_i["eta"] * t_c, v_m)
            params = self.tube_params(state.r_s[i], state.r_a[i])
            bb = tube_boundary_barriers(self.tube, p, params)
            keep = bb.gradient
            values["tube_l"], values["tube_r"] = bb.V_l, bb.V_r
            values["line"] = line_integral_lyapunov(self.tube, p, c.k1, v_m)
        stack = line + avoid + keep
        v_c, k = _saturate(-stack, v_m)
        return ControlCommand(v_c, line, avoid, keep, k, tuple(nbr.tolist()), values)

    def _lateral_barrier(self, state, i, loc_i, probe, values):
        d_t = float(loc_i["d_t"])
        if probe is None or d_t >= state.r_a[i]:
            values["tube"] = 0.0
            return np.zeros(2)
        params = self.tube_params(state.r_s[i], state.r_a[i])
        value, deriv = unified_barrier_profile(max(d_t, 1e-12), params.r_s_prime, params)
        values["tube"] = float(value) if d_t > 0 else np.inf
        px, py = state.positions[i].tolist()
        mx, my = loc_i["mid"].tolist()
        rx, ry = px - mx, py - my
        dist = math.hypot(rx, ry)
        if dist <= 1e-12:
            return np.zeros(2)
        ux, uy = rx / dist, ry / dist
        h2 = 2.0 * _PROBE_STEP
        r0, r1, r2, r3 = probe["r_t"].tolist()
        (m0x, m0y), (m1x, m1y), (m2x, m2y), (m3x, m3y) = probe["mid"].tolist()
        # d(d_t)/dp = d(r_t)/dp - u^T (I - dm/dp)
        gx = (r0 - r1) / h2 - ux + (ux * (m0x - m1x) + uy * (m0y - m1y)) / h2
        gy = (r2 - r3) / h2 - uy + (ux * (m2x - m3x) + uy * (m2y - m3y)) / h2
        cx, cy = deriv * gx, deriv * gy
        tx, ty = loc_i["t_c"].tolist()
        along = cx * tx + cy * ty
        return np.array([cx - along * tx, cy - along * ty])

    # ------------------------------------------------------------- Lyapunov
    def lyapunov(self, state: SwarmState, commands=None):
        """Composite function ``V`` and its rate along the commanded velocities.

        Only meaningful for the full controller; finished robots are excluded.
        """
        if self.config.variant != "full":
            return float("nan"), float("nan")
        if commands is None:
            commands = self.commands(state)
        V = 0.0
        Vdot = 0.0
        for i, cmd in enumerate(commands):
            if state.finished[i]:
                continue
            vals = cmd.barrier_values
            V += vals["line"] + 0.5 * vals["pair"] + vals["tube_l"] + vals["tube_r"]
            Vdot += float(cmd.stack @ cmd.v_c)
        return V, Vdot

    def lyapunov_value(self, state: SwarmState) -> float:
        """``V`` evaluated directly, without building commands."""
        c = self.config
        V = 0.0
        for i in np.nonzero(~state.finished)[0]:
            p = state.positions[i]
            V += line_integral_lyapunov(self.tube, p, c.k1, float(state.v_m[i]))
            nbr = self.neighbor_set(state, i)
            V += 0.5 * avoidance_term(p, state.positions[nbr], self.avoidance_params(state.r_s[i], state.r_a[i]))[1]
            V += boundary_barrier_value(self.tube, p, self.tube_params(state.r_s[i], state.r_a[i]))
        return V


def _saturate_rows(V, v_m):
    norm = np.hypot(V[:, 0], V[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(norm <= v_m, 1.0, v_m / norm)
    return k[:, None] * V, k


def _row(loc, i):
    return {k: v[i] for k, v in loc.items()}


def full_command(tube, state, i, config: ControllerConfig) -> ControlCommand:
    return SwarmController(tube, replace(config, variant="full")).command(state, i)


def modified_command(tube, state, i, config: ControllerConfig) -> ControlCommand:
    return SwarmController(tube, replace(config, variant="modified")).command(state, i)
