"""Analytic-versus-finite-difference gradient checks for every potential.

Each check samples points, evaluates the gradient the controller uses and a
central difference of the matching scalar potential, and reports the worst
relative error ``|g - g_fd| / max(|g_fd|, floor)``.
"""
from __future__ import annotations

import numpy as np

from .potentials import (AvoidanceParams, TubeKeepParams, avoidance_term, boundary_barrier_value,
                         line_integral_lyapunov, panel_field, tube_boundary_barriers,
                         unified_tube_barrier)
from .scalar_fields import vector_sat
from .tube import VirtualTube, build_sine_tube, build_tube_from_waypoints

GRAD_FLOOR = 1e-3


def central_difference(f, p, h: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    e = np.eye(2) * h
    return np.array([(f(p + e[k]) - f(p - e[k])) / (2 * h) for k in range(2)])


def _rel_err(g, g_fd, floor=GRAD_FLOOR):
    return float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), floor))


def default_tube() -> VirtualTube:
    """Sine tube with a gentle bend, the default for the battery."""
    return build_sine_tube(20.0, 1.5, 24.0, 3.0)


def sample_clear_points(tube: VirtualTube, n: int, clearance: float, rng, s_margin: float = 1.0,
                        station_gap: float = 1e-4) -> np.ndarray:
    """Points inside the tube farther than ``clearance`` from its boundary.

    Points within ``station_gap`` (as a fraction of the spacing) of a station
    are skipped: tube width and midline have kinks there, where any finite
    difference straddles two slopes.
    """
    out = []
    s_grid = tube.curve.s
    while len(out) < n:
        s = rng.uniform(s_margin, tube.length - s_margin, 4 * n)
        frac = rng.uniform(0.0, 1.0, 4 * n)
        fr = tube.frames_at(s)
        lam = fr["lambda_l"] + frac * (fr["lambda_r"] - fr["lambda_l"])
        P = fr["p"] + lam[:, None] * fr["n"]
        ok = tube.locate(P)["inside"] & (tube.boundary_distance(P) > clearance)
        k = np.clip(np.searchsorted(s_grid, s), 1, len(s_grid) - 1)
        spacing = s_grid[k] - s_grid[k - 1]
        gap = np.minimum(s - s_grid[k - 1], s_grid[k] - s) / spacing
        ok &= gap > station_gap
        out.extend(P[ok].tolist())
    return np.array(out[:n])


def check_line_integral(n=200, seed=0, k1=1.0, v_m=1.5, h=1e-6) -> float:
    """Approach term against the line-integral function on a straight tube.

    On a straight tube the approach term is exactly its gradient; on a
    curved one the lateral dependence of the integrand adds a normal part.
    """
    tube = build_tube_from_waypoints([[0.0, 0.0], [15.0, 0.0]], 2.0)
    rng = np.random.default_rng(seed)
    P = np.column_stack([rng.uniform(0.5, 14.5, n), rng.uniform(-1.9, 1.9, n)])
    worst = 0.0
    for p in P:
        loc = tube.locate(p[None, :])
        g = vector_sat(k1 * loc["l"][0] * loc["eta"][0] * loc["t_c"][0], v_m)
        fd = central_difference(lambda q: line_integral_lyapunov(tube, q, k1, v_m), p, h)
        worst = max(worst, _rel_err(g, fd))
    return worst


def check_pair_barrier(n=1000, seed=1, params=None, h=1e-6) -> float:
    """Avoidance term against the summed pair barrier.

    Neighbours are drawn at separations between ``2 r_s`` (plus a small
    gap, the barrier blows up there) and the cutoff.
    """
    params = params or AvoidanceParams()
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n:
        p = rng.uniform(-1, 1, 2)
        others = p + rng.uniform(-1.3, 1.3, (3, 2))
        d = np.linalg.norm(others - p, axis=1)
        if np.any(d < 2 * params.r_s + 0.01) or np.all(d >= params.cutoff):
            continue
        g, _ = avoidance_term(p, others, params)
        fd = central_difference(lambda q: avoidance_term(q, others, params)[1], p, h)
        worst = max(worst, _rel_err(g, fd))
        done += 1
    return worst


def check_panel(n=1000, seed=2, h=1e-6) -> float:
    """Quadrature gradient of one panel against its quadrature potential."""
    rng = np.random.default_rng(seed)
    anchor, direction = np.zeros(2), np.array([1.0, 0.0])
    g1, g2, d = 1.0, -3.0, 0.4
    worst = 0.0
    done = 0
    while done < n:
        p = rng.uniform([-5.0, -3.0], [3.0, 3.0])
        x = np.clip(p[0], min(g1, g2), max(g1, g2))
        if np.hypot(p[0] - x, p[1]) < d + 0.05:
            continue
        _, g = panel_field(p, [anchor], [direction], g1, g2, d)
        fd = central_difference(lambda q: panel_field(q, [anchor], [direction], g1, g2, d, grad=False)[0], p, h)
        worst = max(worst, _rel_err(g[0], fd))
        done += 1
    return worst


def check_boundary_barriers(tube=None, n=30, seed=3, params=None, h=1e-5) -> float:
    """Full tube-keeping gradient against its panel-sum value."""
    tube = tube or default_tube()
    params = params or TubeKeepParams(r_s=0.4, r_a=0.8, check_directions=False)
    P = sample_clear_points(tube, n, params.r_s + 0.1, np.random.default_rng(seed), s_margin=5.0)
    worst = 0.0
    for p in P:
        g = tube_boundary_barriers(tube, p, params).gradient
        fd = central_difference(lambda q: boundary_barrier_value(tube, q, params), p, h)
        worst = max(worst, _rel_err(g, fd))
    return worst


def check_unified_barrier(tube=None, n=1000, seed=4, params=None, h=1e-6) -> float:
    """Unified-barrier gradient against the barrier value, inside the active band."""
    tube = tube or default_tube()
    params = params or TubeKeepParams()
    rsp = tube.modified_safety_radius(params.r_s)
    rng = np.random.default_rng(seed)
    # keep drawing clear points until enough fall in the band r_s' < d_t < r_a
    P = np.zeros((0, 2))
    while len(P) < n:
        Q = sample_clear_points(tube, 4 * n, params.r_s, rng)
        d_t = tube.locate(Q)["d_t"]
        P = np.vstack([P, Q[(d_t > rsp + 0.01) & (d_t < params.r_a)]])
    P = P[:n]
    worst = 0.0
    for p in P:
        g = unified_tube_barrier(tube, p, params, rsp).c
        fd = central_difference(lambda q: unified_tube_barrier(tube, q, params, rsp).V_t, p, h)
        worst = max(worst, _rel_err(g, fd))
    return worst


CHECKS = {
    "line_integral": check_line_integral,
    "pair_barrier": check_pair_barrier,
    "panel": check_panel,
    "tube_boundary": check_boundary_barriers,
    "unified_barrier": check_unified_barrier,
}


def gradient_battery(names=None) -> dict:
    """Run the named checks (all by default); returns ``{name: max relative error}``."""
    names = list(CHECKS) if names is None else list(names)
    return {name: CHECKS[name]() for name in names}
