"""Curve virtual tube: construction, validation and point queries.

A tube is stored as an arc-length resampled polyline of stations. Every
station carries a Frenet-style frame (unit tangent ``t_c``, left normal
``n_c``), a signed curvature and the two lateral extents ``lambda_l <=
lambda_r`` measured along ``n_c``. Between stations the frame, curvature and
extents are interpolated linearly (tangents renormalised), so a query point
``y`` is located by solving ``(y - p(u)) . t_c(u) = 0`` per segment, which is
a quadratic in the interpolation fraction ``u``.

Beyond the two end cross sections the tube is continued straight along the
end frames, which gives points past the finishing line a positive length.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import (ConfigError, DegenerateSpacing, EmptyTrajectory, ImproperTube,
                         SelfIntersectingCurve, TubeTooNarrow)

GEOM_TOL = 1e-9
PROPER_MARGIN = 1e-6
ETA_MIN = 0.2
ETA_MAX = 5.0


def _rot90(v):
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def segments_cross(a0, a1, b0, b1, tol=1e-12):
    """Strict crossing test for segment pairs (broadcasting over leading dims).

    Touching at an endpoint or collinear overlap does not count.
    """
    da = a1 - a0
    db = b1 - b0
    d1 = _cross2(da, b0 - a0)
    d2 = _cross2(da, b1 - a0)
    d3 = _cross2(db, a0 - b0)
    d4 = _cross2(db, a1 - b0)
    return (d1 * d2 < -tol) & (d3 * d4 < -tol)


def point_polyline_distance(points, vertices, chunk=2048):
    """Euclidean distance from each point to a polyline given by its vertices."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = vertices[:-1]
    ab = vertices[1:] - a
    ab2 = np.einsum("ij,ij->i", ab, ab)
    ab2 = np.where(ab2 > 0, ab2, 1.0)
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        q = points[lo:lo + chunk]
        ap = q[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("mnj,nj->mn", ap, ab) / ab2, 0.0, 1.0)
        diff = ap - t[..., None] * ab[None]
        out[lo:lo + chunk] = np.sqrt(np.min(np.einsum("mnj,mnj->mn", diff, diff), axis=1))
    return out


@dataclass(frozen=True, eq=False)
class GeneratingCurve:
    """Resampled midline. ``s`` is cumulative chord length from the start."""

    points: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    s: np.ndarray

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def l(self) -> np.ndarray:
        return self.s - self.s[-1]

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def finish(self) -> np.ndarray:
        return self.points[-1]

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_points(cls, points) -> "GeneratingCurve":
        points = np.asarray(points, dtype=float)
        seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
        if np.any(seg <= GEOM_TOL):
            raise DegenerateSpacing("consecutive stations coincide")
        s = np.concatenate([[0.0], np.cumsum(seg)])
        order = 2 if len(points) > 2 else 1
        tangents = _unit(np.gradient(points, s, axis=0, edge_order=order))
        return cls(points, tangents, _rot90(tangents), _menger_curvature(points), s)


def _menger_curvature(points):
    """Signed curvature of the circle through each station and its neighbours.

    Exact for stations on a circle; the two end values are extrapolated
    linearly from the interior.
    """
    n = len(points)
    if n < 3:
        return np.zeros(n)
    a, b, c = points[:-2], points[1:-1], points[2:]
    ab, bc, ac = b - a, c - b, c - a
    norm = lambda v: np.hypot(v[:, 0], v[:, 1])
    k = 2.0 * _cross2(ab, bc) / (norm(ab) * norm(bc) * norm(ac))
    if n == 3:
        return np.full(3, k[0])
    return np.concatenate([[2 * k[0] - k[1]], k, [2 * k[-1] - k[-2]]])


@dataclass(frozen=True)
class TubeProjection:
    station: int
    fraction: float
    foot: np.ndarray
    t_c: np.ndarray
    n_c: np.ndarray
    lam: float
    s: float
    l: float
    eta: float
    curvature: float
    lambda_l: float
    lambda_r: float
    r_t: float
    mid: np.ndarray
    d_t: float
    inside: bool
    outside_longitudinally: bool
    residual: float


@dataclass
class ProperDiagnostics:
    ok: bool
    intersecting_pairs: list = field(default_factory=list)
    curvature_stations: list = field(default_factory=list)

    @property
    def stations(self) -> list:
        idx = set(self.curvature_stations)
        for i, j in self.intersecting_pairs:
            idx.update((i, j))
        return sorted(idx)

    def __bool__(self):
        return self.ok

    def summary(self) -> str:
        if self.ok:
            return "PASS"
        parts = []
        if self.curvature_stations:
            parts.append(f"curvature condition fails at stations {_compact(self.curvature_stations)}")
        if self.intersecting_pairs:
            shown = ", ".join(f"({i},{j})" for i, j in self.intersecting_pairs[:10])
            more = len(self.intersecting_pairs) - 10
            parts.append(f"{len(self.intersecting_pairs)} intersecting cross-section pairs: {shown}"
                         + (f" ... (+{more})" if more > 0 else ""))
        return "FAIL: " + "; ".join(parts)


def _compact(idx):
    idx = list(idx)
    if len(idx) <= 12:
        return str(idx)
    return f"{idx[:6]} ... {idx[-3:]} ({len(idx)} total)"


class VirtualTube:
    """Immutable curve virtual tube.

    Parameters
    ----------
    curve : GeneratingCurve
    lambda_l, lambda_r : array of shape (N,)
        Lateral extents along ``n_c``; ``lambda_l < lambda_r``. The
        ``lambda_r`` side lies along ``+n_c``.
    eta_min, eta_max : float
        Clamp applied to the scaling factor ``1 / (1 - kappa * lam)``.
    """

    def __init__(self, curve: GeneratingCurve, lambda_l, lambda_r,
                 eta_min: float = ETA_MIN, eta_max: float = ETA_MAX):
        self.curve = curve
        self.lambda_l = np.asarray(lambda_l, dtype=float).copy()
        self.lambda_r = np.asarray(lambda_r, dtype=float).copy()
        if self.lambda_l.shape != (len(curve),) or self.lambda_r.shape != (len(curve),):
            raise ValueError("lateral extents must have one value per station")
        if np.any(self.lambda_r - self.lambda_l <= 0):
            raise TubeTooNarrow("lambda_r must exceed lambda_l at every station")
        if not (0 < eta_min <= 1 <= eta_max < math.inf):
            raise ValueError("need 0 < eta_min <= 1 <= eta_max < inf")
        self.eta_min = float(eta_min)
        self.eta_max = float(eta_max)
        for arr in (self.lambda_l, self.lambda_r):
            arr.setflags(write=False)
        for arr in (curve.points, curve.tangents, curve.normals, curve.curvature, curve.s):
            arr.setflags(write=False)
        self._rs_prime: dict[float, float] = {}

        P = curve.points
        self._seg_d = np.diff(P, axis=0)
        self._seg_len = np.diff(curve.s)
        self._seg_dt = np.diff(curve.tangents, axis=0)
        # packed station table for projection: point, tangent, kappa, extents, s
        self._table = np.column_stack([P, curve.tangents, curve.curvature,
                                       self.lambda_l, self.lambda_r, curve.s])
        self._table_step = np.diff(self._table, axis=0)

    # ------------------------------------------------------------------ derived
    @property
    def n_stations(self) -> int:
        return len(self.curve)

    @property
    def length(self) -> float:
        return self.curve.length

    @cached_property
    def p_l(self):
        return self.curve.points + self.lambda_l[:, None] * self.curve.normals

    @cached_property
    def p_r(self):
        return self.curve.points + self.lambda_r[:, None] * self.curve.normals

    @cached_property
    def r_t(self):
        return 0.5 * np.abs(self.lambda_r - self.lambda_l)

    @cached_property
    def mid(self):
        return 0.5 * (self.p_l + self.p_r)

    @cached_property
    def t_l(self):
        return _unit(np.gradient(self.p_l, self.curve.s, axis=0))

    @cached_property
    def t_r(self):
        return _unit(np.gradient(self.p_r, self.curve.s, axis=0))

    def boundary_distance(self, points) -> np.ndarray:
        """Distance from each point to the union of the two boundary curves."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.minimum(point_polyline_distance(points, self.p_l),
                          point_polyline_distance(points, self.p_r))

    # ------------------------------------------------------------ interpolation
    def frames_at(self, s) -> dict:
        """Interpolated frame data at arc-length coordinates ``s`` (any shape).

        Outside ``[0, length]`` the end frame is continued straight with zero
        curvature and frozen extents.
        """
        s = np.asarray(s, dtype=float)
        flat = s.reshape(-1)
        S = self.curve.s
        k = np.clip(np.searchsorted(S, flat, side="right") - 1, 0, len(S) - 2)
        u = (flat - S[k]) / self._seg_len[k]
        before = flat < 0.0
        after = flat > S[-1]
        inner = ~(before | after)
        u = np.where(inner, u, np.where(before, 0.0, 1.0))
        out = self._frame_ku(k, u)
        # straight continuation beyond the ends
        for mask, idx, s0 in ((before, 0, 0.0), (after, -1, S[-1])):
            if np.any(mask):
                ds = flat[mask] - s0
                t = self.curve.tangents[idx]
                out["p"][mask] = self.curve.points[idx] + ds[:, None] * t
                out["t"][mask] = t
                out["n"][mask] = self.curve.normals[idx]
                out["kappa"][mask] = 0.0
                out["lambda_l"][mask] = self.lambda_l[idx]
                out["lambda_r"][mask] = self.lambda_r[idx]
                out["t_l"][mask] = t
                out["t_r"][mask] = t
        out["s"] = flat
        out["p_l"] = out["p"] + out["lambda_l"][:, None] * out["n"]
        out["p_r"] = out["p"] + out["lambda_r"][:, None] * out["n"]
        shape = s.shape
        return {key: val.reshape(shape + val.shape[1:]) for key, val in out.items()}

    def _frame_ku(self, k, u) -> dict:
        c = self.curve
        w0 = (1.0 - u)[:, None]
        w1 = u[:, None]
        t = _unit(w0 * c.tangents[k] + w1 * c.tangents[k + 1])
        tl = _unit(w0 * self.t_l[k] + w1 * self.t_l[k + 1])
        tr = _unit(w0 * self.t_r[k] + w1 * self.t_r[k + 1])
        return {
            "p": c.points[k] + w1 * self._seg_d[k],
            "t": t,
            "n": _rot90(t),
            "kappa": (1.0 - u) * c.curvature[k] + u * c.curvature[k + 1],
            "lambda_l": (1.0 - u) * self.lambda_l[k] + u * self.lambda_l[k + 1],
            "lambda_r": (1.0 - u) * self.lambda_r[k] + u * self.lambda_r[k + 1],
            "t_l": tl,
            "t_r": tr,
        }

    def eta_of(self, kappa, lam):
        # 1 - kappa*lam <= 1/eta_max (including the improper side) maps to eta_max
        g = 1.0 - np.asarray(kappa) * np.asarray(lam)
        return np.clip(1.0 / np.maximum(g, 1.0 / self.eta_max), self.eta_min, self.eta_max)

    # --------------------------------------------------------------- projection
    def locate(self, points) -> dict:
        """Vectorised core of :meth:`project`; returns arrays keyed by name."""
        Y = np.atleast_2d(np.asarray(points, dtype=float))
        M = len(Y)
        c = self.curve
        P, T, S = c.points, c.tangents, c.s
        N = len(P)
        D = Y[:, None, :] - P[None, :, :]
        f = D[..., 0] * T[:, 0] + D[..., 1] * T[:, 1]

        mi, ki = np.nonzero((f[:, :-1] >= 0.0) & (f[:, 1:] < 0.0))
        before = f[:, 0] < 0.0
        after = f[:, -1] >= 0.0
        n_ext = int(before.sum() + after.sum())
        if n_ext:
            bi = np.nonzero(before)[0]
            ai = np.nonzero(after)[0]
            m_all = np.concatenate([mi, bi, ai])
            k_all = np.concatenate([ki, np.zeros(len(bi), int), np.full(len(ai), N - 2)])
            reg = np.concatenate([np.zeros(len(mi), int), np.full(len(bi), -1), np.ones(len(ai), int)])
        else:
            m_all, k_all, reg = mi, ki, None

        # interior candidates: root of (y - p(u)) . t(u) on the segment
        row = self._table[k_all]
        step = self._table_step[k_all]
        n_in = len(mi)
        a = D[mi, ki]
        d, dt, tk = step[:n_in, 0:2], step[:n_in, 2:4], row[:n_in, 2:4]
        qa = -(d[:, 0] * dt[:, 0] + d[:, 1] * dt[:, 1])
        qb = (a[:, 0] * dt[:, 0] + a[:, 1] * dt[:, 1]) - (d[:, 0] * tk[:, 0] + d[:, 1] * tk[:, 1])
        qc = a[:, 0] * tk[:, 0] + a[:, 1] * tk[:, 1]
        u = np.zeros(len(m_all))
        u[:n_in] = _quadratic_root_unit(qa, qb, qc)

        interp = row + u[:, None] * step
        foot = interp[:, 0:2]
        t = interp[:, 2:4]
        t /= np.sqrt(t[:, 0] ** 2 + t[:, 1] ** 2)[:, None]
        kap, lam_l, lam_r, s_all = interp[:, 4], interp[:, 5], interp[:, 6], interp[:, 7]
        if n_ext:
            ext = reg != 0
            idx = np.where(reg[ext] < 0, 0, N - 1)
            u[ext] = np.where(reg[ext] < 0, 0.0, 1.0)
            along = np.einsum("ij,ij->i", Y[m_all[ext]] - P[idx], T[idx])
            foot[ext] = P[idx] + along[:, None] * T[idx]
            t[ext] = T[idx]
            kap[ext] = 0.0
            lam_l[ext] = self.lambda_l[idx]
            lam_r[ext] = self.lambda_r[idx]
            s_all[ext] = S[idx] + along
        n = np.column_stack([-t[:, 1], t[:, 0]])
        rel = Y[m_all] - foot
        lam = rel[:, 0] * n[:, 0] + rel[:, 1] * n[:, 1]
        within = (lam >= lam_l - GEOM_TOL) & (lam <= lam_r + GEOM_TOL)

        if len(m_all) == M and n_ext == 0 and np.all(mi == np.arange(M)):
            first = slice(None)
            reg_s = np.zeros(M, int)
        else:
            if reg is None:
                reg = np.zeros(len(m_all), int)
            order = np.lexsort((k_all, reg != 0, np.abs(lam), ~within, m_all))
            m_sorted = m_all[order]
            first = order[np.r_[True, m_sorted[1:] != m_sorted[:-1]]]
            if len(first) != M:
                raise AssertionError("projection produced no candidate for some point")
            reg_s = reg[first]
        t_s = t[first]
        lam_s = lam[first]
        lam_l, lam_r = lam_l[first], lam_r[first]
        rel_s = rel[first]
        out = {
            "station": k_all[first],
            "fraction": u[first],
            "region": reg_s,
            "foot": foot[first],
            "t_c": t_s,
            "n_c": n[first],
            "lam": lam_s,
            "s": s_all[first],
            "kappa": kap[first],
            "lambda_l": lam_l,
            "lambda_r": lam_r,
            "residual": np.abs(rel_s[:, 0] * t_s[:, 0] + rel_s[:, 1] * t_s[:, 1]),
        }
        out["l"] = out["s"] - S[-1]
        out["eta"] = self.eta_of(out["kappa"], lam_s)
        out["r_t"] = 0.5 * np.abs(lam_r - lam_l)
        centre = 0.5 * (lam_l + lam_r)
        out["mid"] = out["foot"] + centre[:, None] * out["n_c"]
        out["d_t"] = out["r_t"] - np.abs(lam_s - centre)
        out["inside"] = within[first] & (reg_s == 0)
        return out

    def project(self, y) -> TubeProjection:
        """Locate the unique cross section containing ``y``."""
        r = self.locate(np.asarray(y, dtype=float)[None, :])
        return TubeProjection(
            station=int(r["station"][0]), fraction=float(r["fraction"][0]),
            foot=r["foot"][0], t_c=r["t_c"][0], n_c=r["n_c"][0],
            lam=float(r["lam"][0]), s=float(r["s"][0]), l=float(r["l"][0]),
            eta=float(r["eta"][0]), curvature=float(r["kappa"][0]),
            lambda_l=float(r["lambda_l"][0]), lambda_r=float(r["lambda_r"][0]),
            r_t=float(r["r_t"][0]), mid=r["mid"][0], d_t=float(r["d_t"][0]),
            inside=bool(r["inside"][0]),
            outside_longitudinally=bool(r["region"][0] != 0),
            residual=float(r["residual"][0]),
        )

    def length_of(self, points) -> np.ndarray:
        return self.locate(points)["l"]

    # ---------------------------------------------------- modified safety radius
    def modified_safety_radius(self, r_s: float, samples_per_segment: int = 4) -> float:
        """Smallest ``d_t`` threshold above which the disc of radius ``r_s`` fits.

        For each sampled cross section and each side, bisection finds the
        largest offset ``d`` from the boundary endpoint (measured along the
        cross section) at which the true Euclidean distance to the boundary
        curves is still below ``r_s``. The maximum over all samples is
        returned, so ``d_t > r_s'`` implies clearance ``>= r_s``. Cached per
        ``r_s``.
        """
        key = float(r_s)
        if key in self._rs_prime:
            return self._rs_prime[key]
        if r_s <= 0:
            raise ValueError("r_s must be positive")
        if np.any(self.r_t <= r_s):
            bad = np.nonzero(self.r_t <= r_s)[0]
            raise TubeTooNarrow(f"half-width <= r_s={r_s} at stations {_compact(bad)}")
        S = self.curve.s
        n = max(1, int(samples_per_segment))
        frac = np.arange(n) / n
        s_samp = np.concatenate([(S[:-1, None] + frac[None, :] * np.diff(S)[:, None]).ravel(), [S[-1]]])
        fr = self.frames_at(s_samp)
        r_t = 0.5 * (fr["lambda_r"] - fr["lambda_l"])
        ends = np.concatenate([fr["p_l"], fr["p_r"]])
        inward = np.concatenate([fr["n"], -fr["n"]])
        hi = np.concatenate([r_t, r_t])
        lo = np.full(len(ends), float(r_s))
        if np.any(self.boundary_distance(ends + hi[:, None] * inward) < r_s):
            raise TubeTooNarrow(f"some cross section has no point with clearance {r_s}")
        for _ in range(48):
            midv = 0.5 * (lo + hi)
            unsafe = self.boundary_distance(ends + midv[:, None] * inward) < r_s
            lo = np.where(unsafe, midv, lo)
            hi = np.where(unsafe, hi, midv)
        value = float(np.max(hi))
        self._rs_prime[key] = value
        return value

    # ------------------------------------------------------------- serialisation
    def to_dict(self, r_s: float | None = None) -> dict:
        c = self.curve
        stations = [
            {"p": c.points[i].tolist(), "t_c": c.tangents[i].tolist(),
             "n_c": c.normals[i].tolist(), "kappa": float(c.curvature[i]),
             "s": float(c.s[i]), "l": float(c.s[i] - c.s[-1]),
             "lambda_l": float(self.lambda_l[i]), "lambda_r": float(self.lambda_r[i])}
            for i in range(len(c))
        ]
        out = {"stations": stations, "eta_min": self.eta_min, "eta_max": self.eta_max,
               "r_s": None, "r_s_prime": None}
        if r_s is None and self._rs_prime:
            r_s = next(iter(self._rs_prime))
        if r_s is not None:
            out["r_s"] = float(r_s)
            out["r_s_prime"] = self.modified_safety_radius(r_s)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "VirtualTube":
        st = data["stations"]
        arr = lambda key: np.array([row[key] for row in st], dtype=float)
        curve = GeneratingCurve(arr("p"), arr("t_c"), arr("n_c"), arr("kappa"), arr("s"))
        tube = cls(curve, arr("lambda_l"), arr("lambda_r"),
                   eta_min=data.get("eta_min", ETA_MIN), eta_max=data.get("eta_max", ETA_MAX))
        if data.get("r_s") is not None and data.get("r_s_prime") is not None:
            tube._rs_prime[float(data["r_s"])] = float(data["r_s_prime"])
        return tube

    def __repr__(self):
        return (f"VirtualTube(stations={self.n_stations}, length={self.length:.3f}, "
                f"r_t=[{self.r_t.min():.3f}, {self.r_t.max():.3f}])")


def _quadratic_root_unit(a, b, c):
    """Root in [0, 1] of ``c + b u + a u^2`` given ``c >= 0 > a + b + c``.

    ``c / q`` is the root that stays finite as ``a -> 0`` and is the one
    inside the bracket for the nearly linear functions met here; the other
    root ``q / a`` is the fallback.
    """
    disc = np.sqrt(np.maximum(b * b - 4.0 * a * c, 0.0))
    q = -0.5 * (b + np.copysign(disc, b))
    u = np.divide(c, q, out=np.zeros_like(c), where=q != 0)
    bad = (u < -1e-12) | (u > 1.0 + 1e-12)
    if bad.any():
        alt = np.divide(q, a, out=np.zeros_like(c), where=a != 0)
        u = np.where(bad, alt, u)
    u = np.clip(u, 0.0, 1.0)
    # one Newton polish step
    g = c + u * (b + u * a)
    dg = b + 2.0 * a * u
    step = np.divide(g, dg, out=np.zeros_like(g), where=np.abs(dg) > 1e-300)
    return np.clip(u - step, 0.0, 1.0)


# ---------------------------------------------------------------------- builders
def _resample(points, spacing):
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.r_[True, seg > GEOM_TOL]
    pts = pts[keep]
    if len(pts) < 2:
        raise DegenerateSpacing("need at least two distinct waypoints")
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    total = cum[-1]
    n = max(2, int(round(total / spacing)) + 1)
    grid = np.linspace(0.0, total, n)
    out = np.column_stack([np.interp(grid, cum, pts[:, 0]), np.interp(grid, cum, pts[:, 1])])
    return out, grid, cum, keep


def check_simple(points) -> list:
    """Index pairs of non-adjacent polyline segments that cross."""
    P = np.asarray(points, dtype=float)
    a0, a1 = P[:-1], P[1:]
    n = len(a0)
    pairs = []
    for lo in range(0, n, 512):
        i = np.arange(lo, min(n, lo + 512))
        hit = segments_cross(a0[i, None], a1[i, None], a0[None], a1[None])
        hit &= (np.arange(n)[None, :] > i[:, None] + 1)
        ii, jj = np.nonzero(hit)
        pairs += list(zip((i[ii]).tolist(), jj.tolist()))
    return pairs


def _widths_on_grid(half_widths, grid, cum, keep, n_wp):
    """Return (w_l, w_r) magnitudes on the resampled grid."""
    if callable(half_widths):
        vals = np.array([np.broadcast_to(np.asarray(half_widths(s), dtype=float), (2,))
                         if np.ndim(half_widths(s)) else (float(half_widths(s)),) * 2
                         for s in grid], dtype=float)
        return vals[:, 0], vals[:, 1]
    hw = np.asarray(half_widths, dtype=float)
    if hw.ndim == 0:
        return np.full(len(grid), float(hw)), np.full(len(grid), float(hw))
    if hw.shape[0] != n_wp:
        raise ValueError(f"expected {n_wp} half-widths, got {hw.shape[0]}")
    hw = hw[keep]
    if hw.ndim == 1:
        w = np.interp(grid, cum, hw)
        return w, w.copy()
    return np.interp(grid, cum, hw[:, 0]), np.interp(grid, cum, hw[:, 1])


def build_tube_from_waypoints(waypoints, half_widths, resample_spacing: float = 0.1, *,
                              eta_min: float = ETA_MIN, eta_max: float = ETA_MAX,
                              check: bool = True) -> VirtualTube:
    """Build a tube around the polyline through ``waypoints``.

    ``half_widths`` may be a scalar, one value per waypoint (symmetric), an
    ``(n, 2)`` array of ``(w_l, w_r)`` magnitudes per waypoint, or a callable
    of arc length returning either form. The resulting extents are
    ``lambda_l = -w_l`` and ``lambda_r = +w_r``.
    """
    waypoints = np.asarray(waypoints, dtype=float)
    if waypoints.ndim != 2 or waypoints.shape[1] != 2 or len(waypoints) < 2:
        raise DegenerateSpacing("need at least two 2-D waypoints")
    if not resample_spacing > 0:
        raise DegenerateSpacing("resample spacing must be positive")
    pts, grid, cum, keep = _resample(waypoints, resample_spacing)
    if np.linalg.norm(pts[0] - pts[-1]) <= GEOM_TOL:
        raise SelfIntersectingCurve("generating curve is closed")
    crossings = check_simple(pts)
    if crossings:
        raise SelfIntersectingCurve(f"generating curve crosses itself at segments {crossings[:5]}")
    w_l, w_r = _widths_on_grid(half_widths, grid, cum, keep, len(waypoints))
    if np.any(w_l + w_r <= 0):
        raise TubeTooNarrow("tube width must be positive")
    curve = GeneratingCurve.from_points(pts)
    tube = VirtualTube(curve, -w_l, w_r, eta_min=eta_min, eta_max=eta_max)
    if check:
        diag = validate_proper(tube)
        if not diag.ok:
            raise ImproperTube(diag.summary(), diag.stations)
    return tube


def build_sine_tube(x_length: float, amplitude: float, period: float,
                    half_width: Callable[[np.ndarray], np.ndarray] | float,
                    resample_spacing: float = 0.1, *, origin=(0.0, 0.0),
                    n_samples: int = 4001, **kwargs) -> VirtualTube:
    """Tube whose midline is ``y = amplitude * sin(2 pi x / period)``.

    ``half_width`` is either a constant or a function of ``x``.
    """
    x = np.linspace(0.0, x_length, n_samples)
    pts = np.column_stack([x, amplitude * np.sin(2 * np.pi * x / period)]) + np.asarray(origin)
    if callable(half_width):
        hw = np.asarray(half_width(x), dtype=float)
    else:
        hw = np.full(n_samples, float(half_width))
    return build_tube_from_waypoints(pts, hw, resample_spacing, **kwargs)


def build_tube_from_trajectory(trajectory, obstacles=(), clearance_cap: float = 2.0,
                               resample_spacing: float = 0.1, *, margin: float = 0.05,
                               eta_min: float = ETA_MIN, eta_max: float = ETA_MAX) -> VirtualTube:
    """Tube around a recorded trajectory, bounded by the closest obstacles.

    At each station the extent on each side of the trajectory is the distance
    to the nearest obstacle point lying in that half-plane, capped at
    ``clearance_cap``; the disc of that radius around the station is obstacle
    free, hence so is the cross section. On the concave side the extent is
    additionally limited to ``(1 - margin) / |kappa|`` so adjacent cross
    sections cannot meet.
    """
    trajectory = np.asarray(trajectory, dtype=float).reshape(-1, 2) if len(trajectory) else np.empty((0, 2))
    if len(trajectory) < 2:
        raise EmptyTrajectory("trajectory needs at least two samples")
    if not clearance_cap > 0:
        raise ValueError("clearance cap must be positive")
    pts, grid, cum, keep = _resample(trajectory, resample_spacing)
    crossings = check_simple(pts)
    if crossings:
        raise SelfIntersectingCurve(f"trajectory crosses itself at segments {crossings[:5]}")
    curve = GeneratingCurve.from_points(pts)
    w_l = np.full(len(pts), float(clearance_cap))
    w_r = np.full(len(pts), float(clearance_cap))
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 2)
    if len(obs):
        from scipy.spatial import cKDTree

        tree = cKDTree(obs)
        # candidates within the cap are all that matter
        for i, (p, n) in enumerate(zip(curve.points, curve.normals)):
            idx = tree.query_ball_point(p, clearance_cap)
            if not idx:
                continue
            rel = obs[idx] - p
            dist = np.linalg.norm(rel, axis=1)
            side = rel @ n
            if np.any(side > 0):
                w_r[i] = min(w_r[i], dist[side > 0].min())
            if np.any(side < 0):
                w_l[i] = min(w_l[i], dist[side < 0].min())
            on_line = side == 0
            if np.any(on_line):
                w_l[i] = min(w_l[i], dist[on_line].min())
                w_r[i] = min(w_r[i], dist[on_line].min())
    kap = curve.curvature
    with np.errstate(divide="ignore"):
        lim = np.where(np.abs(kap) > 0, (1.0 - margin) / np.abs(kap), np.inf)
    w_r = np.where(kap > 0, np.minimum(w_r, lim), w_r)
    w_l = np.where(kap < 0, np.minimum(w_l, lim), w_l)
    tube = VirtualTube(curve, -w_l, w_r, eta_min=eta_min, eta_max=eta_max)
    diag = validate_proper(tube)
    if not diag.ok:
        raise ImproperTube(diag.summary(), diag.stations)
    return tube


# -------------------------------------------------------------------- validation
def validate_proper(tube: VirtualTube, margin: float = PROPER_MARGIN) -> ProperDiagnostics:
    """Check that every in-tube point lies on exactly one cross section.

    Two independent tests are combined: the local curvature condition
    ``1 - kappa * lam > margin`` over each cross section, and a pairwise
    crossing test between all station cross sections.
    """
    kap = tube.curve.curvature
    worst = np.minimum(1.0 - kap * tube.lambda_l, 1.0 - kap * tube.lambda_r)
    curv_bad = np.nonzero(worst <= margin)[0].tolist()

    A, B = tube.p_l, tube.p_r
    n = len(A)
    pairs = []
    for lo in range(0, n, 256):
        i = np.arange(lo, min(n, lo + 256))
        hit = segments_cross(A[i, None], B[i, None], A[None], B[None])
        hit &= np.arange(n)[None, :] > i[:, None]
        ii, jj = np.nonzero(hit)
        pairs += list(zip(i[ii].tolist(), jj.tolist()))
    return ProperDiagnostics(ok=not curv_bad and not pairs,
                             intersecting_pairs=pairs, curvature_stations=curv_bad)


# ---------------------------------------------------------------- functional API
def project(tube: VirtualTube, y) -> TubeProjection:
    return tube.project(y)


def modified_safety_radius(tube: VirtualTube, r_s: float) -> float:
    return tube.modified_safety_radius(r_s)


def save_tube(tube: VirtualTube, path, r_s: float | None = None) -> None:
    Path(path).write_text(json.dumps(tube.to_dict(r_s), indent=1))


def load_tube(path) -> VirtualTube:
    try:
        return VirtualTube.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a tube file (missing {exc})") from None
