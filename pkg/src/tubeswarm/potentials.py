"""Lyapunov and barrier fields with their gradients.

Four families live here: the line-integral Lyapunov function that drives a
robot to the finishing line, the pairwise avoidance barrier, the
single-panel boundary potentials of the full controller and the unified
tube-keeping barrier of the modified controller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (CoincidentPositions, ConfigError, DirectionalConstraintViolated,
                         PanelTouchesPoint)
from .scalar_fields import (BumpParams, SmoothSatParams, bump, bump_deriv, smooth_sat,
                            smooth_sat_deriv)
from .tube import VirtualTube

FD_STEP = 1e-6


# ------------------------------------------------------------- line integral
def line_integral_lyapunov(tube: VirtualTube, y, k1: float, v_m: float) -> float:
    """Line integral of the saturated approach field from the finishing line to ``y``.

    The path follows the offset curve of constant lateral coordinate, along
    which the integrand reduces to ``min(k1 u, v_m / eta)`` with ``u`` the
    remaining length. Curvature and extents are piecewise linear in arc
    length, so the integrand is piecewise linear once its kinks are added as
    nodes, and the trapezoid rule is exact.
    """
    loc = tube.locate(np.asarray(y, dtype=float)[None, :])
    return float(_line_integral(tube, float(loc["s"][0]), float(loc["lam"][0]), k1, v_m))


def line_integral_lyapunov_many(tube: VirtualTube, Y, k1: float, v_m: float) -> np.ndarray:
    loc = tube.locate(Y)
    return np.array([_line_integral(tube, s, lam, k1, v_m) for s, lam in zip(loc["s"], loc["lam"])])


def _saturated_ramp(length, k1, cap):
    """Integral of ``min(k1 u, cap)`` over ``[0, length]``."""
    knee = cap / k1
    if length <= knee:
        return 0.5 * k1 * length * length
    return 0.5 * cap * knee + cap * (length - knee)


def _line_integral(tube: VirtualTube, s_q: float, lam: float, k1: float, v_m: float) -> float:
    if k1 <= 0 or v_m <= 0:
        raise ConfigError("k1 and v_m must be positive")
    L = tube.length
    if s_q >= L:
        return _saturated_ramp(s_q - L, k1, v_m)
    S = tube.curve.s
    lo_g, hi_g = 1.0 / tube.eta_max, 1.0 / tube.eta_min

    nodes = [np.array([s_q, L]), S[(S > s_q) & (S < L)]]
    if s_q < 0:
        nodes.append(np.array([0.0]))
    nodes = np.unique(np.concatenate(nodes))
    # on each piece both g(s) = 1 - kappa(s) lam and h(s) = k1 (L - s) / v_m are affine
    a, b = nodes[:-1], nodes[1:]
    ga, gb = _shrink_on_pieces(tube, a, b, lam)
    ha, hb = k1 * (L - a) / v_m, k1 * (L - b) / v_m
    extra = []
    for fa, fb in ((ga - lo_g, gb - lo_g), (ga - hi_g, gb - hi_g), (ha - ga, hb - gb),
                   (ha - lo_g, hb - lo_g), (ha - hi_g, hb - hi_g)):
        cross = fa * fb < 0
        w = fa[cross] / (fa[cross] - fb[cross])
        extra.append(a[cross] + w * (b[cross] - a[cross]))
    nodes = np.unique(np.concatenate([nodes] + extra))
    a, b = nodes[:-1], nodes[1:]
    ga, gb = _shrink_on_pieces(tube, a, b, lam)
    fa = np.minimum(k1 * (L - a), v_m * np.clip(ga, lo_g, hi_g))
    fb = np.minimum(k1 * (L - b), v_m * np.clip(gb, lo_g, hi_g))
    return float(np.sum(0.5 * (fa + fb) * (b - a)))


def _shrink_on_pieces(tube, a, b, lam):
    """End values of ``1 - kappa lam`` on pieces ``[a, b]`` that do not straddle s = 0.

    Curvature is zero on the straight continuation before the start.
    """
    S, kap = tube.curve.s, tube.curve.curvature
    before = b <= 0
    ka = np.where(before, 0.0, np.interp(a, S, kap))
    kb = np.where(before, 0.0, np.interp(b, S, kap))
    return 1.0 - ka * lam, 1.0 - kb * lam


# --------------------------------------------------------- pairwise avoidance
@dataclass(frozen=True)
class AvoidanceParams:
    k2: float = 1.0
    eps_m: float = 1e-6
    eps_s: float = 1e-6
    r_s: float = 0.4
    r_a: float = 0.8
    bump: BumpParams = field(init=False, repr=False)
    ssat: SmoothSatParams = field(init=False, repr=False)

    def __post_init__(self):
        if min(self.k2, self.eps_m, self.r_s, self.r_a) <= 0 or self.eps_s < 0:
            raise ConfigError("avoidance parameters must be positive")
        if self.r_a <= self.r_s:
            raise ConfigError(f"need r_a > r_s, got r_a={self.r_a}, r_s={self.r_s}")
        object.__setattr__(self, "bump", BumpParams(2.0 * self.r_s, self.r_s + self.r_a))
        object.__setattr__(self, "ssat", SmoothSatParams(self.eps_s))

    @property
    def cutoff(self) -> float:
        return self.r_s + self.r_a


def pair_barrier_profile(dist, params: AvoidanceParams):
    """Avoidance barrier and its derivative as functions of separation."""
    d = np.asarray(dist, dtype=float)
    two_rs = 2.0 * params.r_s
    sig = bump(d, params.bump)
    dsig = bump_deriv(d, params.bump)
    den = (1.0 + params.eps_m) * d - two_rs * smooth_sat(d / two_rs, params.ssat)
    dden = (1.0 + params.eps_m) - smooth_sat_deriv(d / two_rs, params.ssat)
    value = params.k2 * sig / den
    deriv = params.k2 * (dsig * den - sig * dden) / (den * den)
    return value, deriv


def _barrier_float(d: float, d1: float, d2: float, scale: float, gain: float, eps: float,
                   ssat: SmoothSatParams):
    """``gain * bump(d) / ((1 + eps) d - scale * ssat(d / scale))`` and its derivative.

    Plain-float evaluation shared by the pair and tube barriers; it avoids
    numpy overhead when a single robot is evaluated.
    """
    if d < d1:
        sig, dsig = 1.0, 0.0
    elif d < d2:
        den3 = (d1 - d2) ** 3
        A, B = -2.0 / den3, 3.0 * (d1 + d2) / den3
        C, D = -6.0 * d1 * d2 / den3, d2 * d2 * (3.0 * d1 - d2) / den3
        sig = ((A * d + B) * d + C) * d + D
        dsig = (3.0 * A * d + 2.0 * B) * d + C
    else:
        return 0.0, 0.0
    x = d / scale
    e = ssat.eps_s
    if x < ssat.x1:
        sat, dsat = x, 1.0
    elif x < ssat.x2:
        dx = ssat.x2 - x
        rad = math.sqrt(max(e * e - dx * dx, 0.0))
        sat = (1.0 - e) + rad
        dsat = min(max(dx / rad, 0.0), 1.0) if rad > 0 else 1.0
    else:
        sat, dsat = 1.0, 0.0
    den = (1.0 + eps) * d - scale * sat
    dden = (1.0 + eps) - dsat
    return gain * sig / den, gain * (dsig * den - sig * dden) / (den * den)


def _pair_profile_float(d: float, params: AvoidanceParams):
    two_rs = 2.0 * params.r_s
    return _barrier_float(d, two_rs, params.r_s + params.r_a, two_rs, params.k2, params.eps_m,
                          params.ssat)


def pair_barrier(p_i, p_j, params: AvoidanceParams):
    """Return ``(V_m, b)`` for the pair; ``b = -dV_m/d|p_i - p_j| / |p_i - p_j|``."""
    rel = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    d = float(np.hypot(rel[0], rel[1]))
    if d == 0.0:
        raise CoincidentPositions("robots occupy the same position")
    if d >= params.cutoff:
        return 0.0, 0.0
    value, deriv = pair_barrier_profile(d, params)
    return float(value), float(-deriv / d)


# neighbour counts up to this use plain floats, which is faster than numpy
_SCALAR_PAIRS = 8


def avoidance_term(p_i, others, params: AvoidanceParams):
    """Sum of ``-b_ij (p_i - p_j)`` over ``others`` and the summed barrier value."""
    others = np.asarray(others, dtype=float).reshape(-1, 2)
    if len(others) == 0:
        return np.zeros(2), 0.0
    rel = np.asarray(p_i, dtype=float) - others
    if len(others) <= _SCALAR_PAIRS:
        fx = fy = total = 0.0
        for rx, ry in rel.tolist():
            d = math.hypot(rx, ry)
            if d == 0.0:
                raise CoincidentPositions("robots occupy the same position")
            if d >= params.cutoff:
                continue
            value, deriv = _pair_profile_float(d, params)
            fx += deriv / d * rx
            fy += deriv / d * ry
            total += value
        return np.array([fx, fy]), total
    d = np.hypot(rel[:, 0], rel[:, 1])
    if np.any(d == 0.0):
        raise CoincidentPositions("robots occupy the same position")
    near = d < params.cutoff
    if not np.any(near):
        return np.zeros(2), 0.0
    value, deriv = pair_barrier_profile(d[near], params)
    b = -deriv / d[near]
    return -(b[:, None] * rel[near]).sum(axis=0), float(value.sum())


# ----------------------------------------------------------------- panels
@dataclass(frozen=True)
class PanelParams:
    """Segment ``a + x t`` for ``x`` between ``g1`` and ``g2`` with threshold ``d``.

    The integral runs from ``g1`` to ``g2``; reversing the limits flips the
    sign, which is how boundary panels become repulsive.
    """
    anchor: tuple
    direction: tuple
    g1: float
    g2: float
    d: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.direction, dtype=float)
        if abs(np.hypot(t[0], t[1]) - 1.0) > 1e-9:
            raise ConfigError("panel direction must be a unit vector")
        if self.d < 0:
            raise ConfigError("panel threshold must be non-negative")


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GRADE_LEVELS = 12


def _graded_nodes(x_star, lo, hi, scale):
    """Quadrature nodes/weights on ``[lo, hi]`` graded geometrically toward ``x_star``.

    Every argument is an array of shape (K,). Returns arrays of shape (K, n).
    """
    pieces_a, pieces_b = [], []
    for ext, sgn in ((x_star - lo, -1.0), (hi - x_star, 1.0)):
        tau = np.minimum(ext, 0.5 * scale)
        safe_tau = np.where(tau > 0, tau, 1.0)
        ratio = np.where(ext > 0, ext / safe_tau, 1.0)
        k = np.arange(_GRADE_LEVELS + 1)
        breaks = np.where(ext[:, None] > 0, tau[:, None] * ratio[:, None] ** (k / _GRADE_LEVELS), 0.0)
        breaks = np.concatenate([np.zeros((len(ext), 1)), breaks], axis=1)
        pieces_a.append(x_star[:, None] + sgn * breaks[:, :-1])
        pieces_b.append(x_star[:, None] + sgn * breaks[:, 1:])
    a = np.concatenate(pieces_a, axis=1)
    b = np.concatenate(pieces_b, axis=1)
    half = 0.5 * (b - a)
    centre = 0.5 * (a + b)
    nodes = centre[..., None] + half[..., None] * _GL_X
    weights = np.abs(half)[..., None] * _GL_W
    K = len(x_star)
    return nodes.reshape(K, -1), weights.reshape(K, -1)


def panel_field(p, anchors, directions, g1, g2, d, grad: bool = True):
    """Potentials (and gradients w.r.t. ``p``) of many panels at one point.

    The log integrand has a near-singularity at the point of the panel
    closest to ``p``, so each panel is integrated with a Gauss-Legendre rule
    on a mesh graded geometrically toward that point.
    """
    p = np.asarray(p, dtype=float)
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    K = len(anchors)
    g1 = np.broadcast_to(np.asarray(g1, dtype=float), (K,))
    g2 = np.broadcast_to(np.asarray(g2, dtype=float), (K,))
    lo, hi = np.minimum(g1, g2), np.maximum(g1, g2)
    sign = np.where(g2 >= g1, 1.0, -1.0)
    q = p - anchors
    x0 = np.einsum("ij,ij->i", q, directions)
    h2 = np.maximum(np.einsum("ij,ij->i", q, q) - x0 * x0, 0.0)
    x_star = np.clip(x0, lo, hi)
    rho_min = np.sqrt((x_star - x0) ** 2 + h2)
    gap = rho_min - d
    if np.any(gap <= 0):
        k = int(np.argmin(gap))
        raise PanelTouchesPoint(f"point within threshold {d} of panel {k} (gap {gap[k]:.3g})")
    nodes, weights = _graded_nodes(x_star, lo, hi, gap)
    dx = x0[:, None] - nodes
    rho = np.sqrt(dx * dx + h2[:, None])
    value = sign * np.sum(weights * np.log(rho - d), axis=1)
    if not grad:
        return value
    # d/dp ln(rho - d) = (p - a - x t) / (rho (rho - d))
    w = weights / (rho * (rho - d))
    along = np.sum(w * dx, axis=1)
    perp_sum = np.sum(w, axis=1)
    # p - a - x t = (x0 - x) t + (q - x0 t)
    perp = q - x0[:, None] * directions
    gvec = along[:, None] * directions + perp_sum[:, None] * perp
    return value, sign[:, None] * gvec


def panel_potential(p, panel: PanelParams) -> float:
    value = panel_field(p, [panel.anchor], [panel.direction], panel.g1, panel.g2, panel.d, grad=False)
    return float(value[0])


def panel_gradient(p, panel: PanelParams) -> np.ndarray:
    _, g = panel_field(p, [panel.anchor], [panel.direction], panel.g1, panel.g2, panel.d)
    return g[0]


# ---------------------------------------------------- tube keeping (full)
@dataclass(frozen=True)
class TubeKeepParams:
    """Tube-keeping parameters shared by both controller variants.

    ``r_s`` is the panel threshold; ``r_s_prime`` (modified safety radius)
    is taken from the tube when left as None. Panel extents default to
    trailing panels: a short lead ``0.1 r_a`` ahead of each anchor and a tail
    ``5 r_a`` behind it. Symmetric extents pull backwards on every panel
    anchored ahead of the robot; the long tail keeps each panel's push
    forward even after the boundary tangent turns away along a bend.
    """
    k3: float = 1.0
    eps_t: float = 1e-6
    eps_s: float = 1e-6
    r_s: float = 0.4
    r_a: float = 0.8
    r_s_prime: float | None = None
    panel_spacing: float = 0.1
    window: float | None = None
    l_l: float | None = None
    l_r: float | None = None
    r_l: float | None = None
    r_r: float | None = None
    check_directions: bool = True
    direction_tol: float = 1e-9

    def __post_init__(self):
        if self.k3 <= 0 or self.eps_t <= 0 or self.eps_s < 0:
            raise ConfigError("k3 and eps_t must be positive")
        if not (0 < self.r_s < self.r_a):
            raise ConfigError("need 0 < r_s < r_a")
        if self.panel_spacing <= 0:
            raise ConfigError("panel spacing must be positive")
        for name, default in (("l_r", 0.1), ("r_r", 0.1), ("l_l", -5.0), ("r_l", -5.0)):
            if getattr(self, name) is None:
                object.__setattr__(self, name, default * self.r_a)
        if self.window is None:
            object.__setattr__(self, "window", self.r_a)
        if not (self.l_r > 0 and self.r_r > 0 and self.l_l < 0 and self.r_l < 0):
            raise ConfigError("panel extents need l_r, r_r > 0 and l_l, r_l < 0")
        SmoothSatParams(self.eps_s)

    @property
    def n_panels(self) -> int:
        return max(1, int(round(2.0 * self.window / self.panel_spacing)))

    def offsets(self) -> np.ndarray:
        n = self.n_panels
        return -self.window + (np.arange(n) + 0.5) * (2.0 * self.window / n)


@dataclass
class BoundaryBarriers:
    V_l: float
    V_r: float
    grad_l: np.ndarray
    grad_r: np.ndarray
    panel_grad_l: np.ndarray
    panel_grad_r: np.ndarray
    anchors_s: np.ndarray
    t_c: np.ndarray

    @property
    def value(self) -> float:
        return self.V_l + self.V_r

    @property
    def gradient(self) -> np.ndarray:
        return self.grad_l + self.grad_r

    def directional_margins(self):
        """``-t_c . grad`` for every panel on each side (must be non-negative)."""
        return -(self.panel_grad_l @ self.t_c), -(self.panel_grad_r @ self.t_c)


def _length_gradient(tube: VirtualTube, p, h=FD_STEP):
    """Central-difference gradient of the arc-length coordinate through projection."""
    probe = p + np.array([[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
    loc = tube.locate(probe)
    s = loc["s"]
    return np.array([s[0] - s[1], s[2] - s[3]]) / (2 * h), loc


def _window_field(tube, p, s_nodes, params, grad=True):
    fr = tube.frames_at(s_nodes)
    lead = (params.l_r, params.r_r)
    tail = (params.l_l, params.r_l)
    out = []
    for side, key in enumerate(("p_l", "p_r")):
        tkey = "t_l" if side == 0 else "t_r"
        out.append(panel_field(p, fr[key], fr[tkey], lead[side], tail[side], params.r_s, grad=grad))
    return out


def tube_boundary_barriers(tube: VirtualTube, p_i, params: TubeKeepParams,
                           s_step: float = 1e-5) -> BoundaryBarriers:
    """Left/right panel barriers summed over a window that travels with the robot.

    Panels are anchored on the boundary curves at arc lengths
    ``s(p_i) + offset_j`` (midpoints of ``[-window, window]`` at the panel
    spacing) and each is weighted by the spacing. Because the anchors move
    with the robot, the gradient has a second part: the derivative of the
    sum w.r.t. a common shift of the anchors, times the gradient of ``s``.
    """
    p = np.asarray(p_i, dtype=float)
    loc = tube.locate(p[None, :])
    s0 = float(loc["s"][0])
    t_c = loc["t_c"][0]
    offs = params.offsets()
    n = len(offs)
    weight = params.k3 * (2.0 * params.window / n)
    nodes = s0 + offs
    # centre nodes plus the two shifted copies in one evaluation per side
    (vl, gl), (vr, gr) = _window_field(tube, p, np.concatenate([nodes, nodes + s_step, nodes - s_step]), params)
    if params.check_directions:
        _check_directions(gl[:n], gr[:n], t_c, nodes, params.direction_tol)
    grad_s, _ = _length_gradient(tube, p)
    shift_l = weight * (vl[n:2 * n].sum() - vl[2 * n:].sum()) / (2 * s_step)
    shift_r = weight * (vr[n:2 * n].sum() - vr[2 * n:].sum()) / (2 * s_step)
    return BoundaryBarriers(
        V_l=float(weight * vl[:n].sum()), V_r=float(weight * vr[:n].sum()),
        grad_l=weight * gl[:n].sum(axis=0) + shift_l * grad_s,
        grad_r=weight * gr[:n].sum(axis=0) + shift_r * grad_s,
        panel_grad_l=gl[:n], panel_grad_r=gr[:n], anchors_s=nodes, t_c=t_c,
    )


def boundary_barrier_value(tube: VirtualTube, p_i, params: TubeKeepParams) -> float:
    p = np.asarray(p_i, dtype=float)
    s0 = float(tube.locate(p[None, :])["s"][0])
    offs = params.offsets()
    weight = params.k3 * (2.0 * params.window / len(offs))
    vl, vr = _window_field(tube, p, s0 + offs, params, grad=False)
    return float(weight * (vl.sum() + vr.sum()))


def _check_directions(gl, gr, t_c, s_nodes, tol):
    for side, g in (("left", gl), ("right", gr)):
        margin = -(g @ t_c)
        bad = margin < -tol * np.maximum(1.0, np.linalg.norm(g, axis=1))
        if np.any(bad):
            k = int(np.argmin(margin))
            raise DirectionalConstraintViolated(
                f"{side} panel anchored at s={s_nodes[k]:.4f} pulls backwards "
                f"(-t_c . grad = {margin[k]:.3g})", station=float(s_nodes[k]), value=float(margin[k]))


# ----------------------------------------------------- unified tube barrier
def unified_barrier_profile(d_t, r_s_prime: float, params: TubeKeepParams):
    """Unified barrier value and its derivative as functions of ``d_t``."""
    if not (0 < r_s_prime < params.r_a):
        raise ConfigError(f"need 0 < r_s' < r_a, got r_s'={r_s_prime}, r_a={params.r_a}")
    sp = SmoothSatParams(params.eps_s)
    if isinstance(d_t, float):
        if d_t <= 0:
            return np.inf, -np.inf
        return _barrier_float(d_t, r_s_prime, params.r_a, r_s_prime, params.k3, params.eps_t, sp)
    d = np.asarray(d_t, dtype=float)
    bp = BumpParams(r_s_prime, params.r_a)
    sig = bump(d, bp)
    dsig = bump_deriv(d, bp)
    den = (1.0 + params.eps_t) * d - r_s_prime * smooth_sat(d / r_s_prime, sp)
    dden = (1.0 + params.eps_t) - smooth_sat_deriv(d / r_s_prime, sp)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(d > 0, params.k3 * sig / den, np.inf)
        deriv = np.where(d > 0, params.k3 * (dsig * den - sig * dden) / (den * den), -np.inf)
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


@dataclass
class UnifiedBarrier:
    V_t: float
    c: np.ndarray
    d_t: float
    t_c: np.ndarray
    r_s_prime: float

    @property
    def lateral(self) -> np.ndarray:
        """``(I - t_c t_c^T) c``: the part of ``c`` orthogonal to the tube direction."""
        return self.c - (self.c @ self.t_c) * self.t_c


def distance_error_gradient(tube: VirtualTube, p, loc=None, h: float = FD_STEP):
    """Gradient of ``d_t = r_t - |p - m|`` via finite differences of ``r_t`` and ``m``.

    Returns None on the midline, where the unit vector is undefined.
    """
    p = np.asarray(p, dtype=float)
    if loc is None:
        loc = {k: v[0] for k, v in tube.locate(p[None, :]).items()}
    rel = p - loc["mid"]
    dist = float(np.hypot(rel[0], rel[1]))
    if dist <= 1e-12:
        return None
    u = rel / dist
    probe = p + np.array([[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]])
    q = tube.locate(probe)
    dr = np.array([q["r_t"][0] - q["r_t"][1], q["r_t"][2] - q["r_t"][3]]) / (2 * h)
    dm = np.column_stack([q["mid"][0] - q["mid"][1], q["mid"][2] - q["mid"][3]]) / (2 * h)
    return dr - u @ (np.eye(2) - dm)


def unified_tube_barrier(tube: VirtualTube, p_i, params: TubeKeepParams,
                         r_s_prime: float | None = None) -> UnifiedBarrier:
    p = np.asarray(p_i, dtype=float)
    if r_s_prime is None:
        r_s_prime = params.r_s_prime if params.r_s_prime is not None else tube.modified_safety_radius(params.r_s)
    loc = {k: v[0] for k, v in tube.locate(p[None, :]).items()}
    d_t = float(loc["d_t"])
    t_c = loc["t_c"]
    if d_t >= params.r_a:
        return UnifiedBarrier(0.0, np.zeros(2), d_t, t_c, r_s_prime)
    value, deriv = unified_barrier_profile(max(d_t, 1e-12), r_s_prime, params)
    grad_d = distance_error_gradient(tube, p, loc)
    if grad_d is None:
        return UnifiedBarrier(float(value), np.zeros(2), d_t, t_c, r_s_prime)
    if d_t <= 0:
        value = np.inf
    return UnifiedBarrier(float(value), deriv * grad_d, d_t, t_c, r_s_prime)
