"""Saturation, bump and smooth-saturation primitives.

All scalar functions accept floats or numpy arrays and broadcast.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, EpsilonOutOfRange

_TAN_675 = math.tan(math.radians(67.5))
_SIN_45 = math.sin(math.radians(45.0))
EPS_S_MAX = _TAN_675 / (_TAN_675 * _SIN_45 - 1.0)


def kappa(v, v_m):
    """Scale factor of the norm saturation; 1 for the zero vector."""
    v = np.asarray(v, dtype=float)
    norm = float(np.hypot(v[0], v[1])) if v.shape == (2,) else float(np.linalg.norm(v))
    if v_m <= 0:
        raise ConfigError("v_m must be positive")
    if norm <= v_m:
        return 1.0
    return v_m / norm


def vector_sat(v, v_m):
    """Clip the norm of ``v`` to ``v_m`` keeping its direction."""
    v = np.asarray(v, dtype=float)
    return kappa(v, v_m) * v


@dataclass(frozen=True)
class BumpParams:
    d1: float
    d2: float
    A: float = field(init=False)
    B: float = field(init=False)
    C: float = field(init=False)
    D: float = field(init=False)

    def __post_init__(self):
        if not (0 < self.d1 < self.d2):
            raise ConfigError(f"bump needs 0 < d1 < d2, got d1={self.d1}, d2={self.d2}")
        den = (self.d1 - self.d2) ** 3
        object.__setattr__(self, "A", -2.0 / den)
        object.__setattr__(self, "B", 3.0 * (self.d1 + self.d2) / den)
        object.__setattr__(self, "C", -6.0 * self.d1 * self.d2 / den)
        object.__setattr__(self, "D", self.d2 ** 2 * (3.0 * self.d1 - self.d2) / den)


def bump(x, params: BumpParams):
    """C1 step from 1 (x <= d1) down to 0 (x >= d2) along a cubic."""
    x = np.asarray(x, dtype=float)
    cubic = ((params.A * x + params.B) * x + params.C) * x + params.D
    out = np.where(x < params.d1, 1.0, np.where(x < params.d2, cubic, 0.0))
    return out if out.ndim else float(out)


def bump_deriv(x, params: BumpParams):
    x = np.asarray(x, dtype=float)
    quad = (3.0 * params.A * x + 2.0 * params.B) * x + params.C
    out = np.where((x >= params.d1) & (x < params.d2), quad, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SmoothSatParams:
    eps_s: float
    x1: float = field(init=False)
    x2: float = field(init=False)

    def __post_init__(self):
        if not (0.0 <= self.eps_s <= EPS_S_MAX):
            raise EpsilonOutOfRange(
                f"eps_s={self.eps_s} outside [0, {EPS_S_MAX:.6f}]")
        x2 = 1.0 + self.eps_s / _TAN_675
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "x1", x2 - self.eps_s * _SIN_45)


def smooth_sat(x, params: SmoothSatParams):
    """Smooth under-approximation of ``min(x, 1)`` for x >= 0.

    Linear up to ``x1``, a circular arc of radius ``eps_s`` up to ``x2``,
    constant 1 afterwards.
    """
    x = np.asarray(x, dtype=float)
    e = params.eps_s
    dx = x - params.x2
    arc = (1.0 - e) + np.sqrt(np.maximum(e * e - dx * dx, 0.0))
    out = np.where(x < params.x1, x, np.where(x < params.x2, arc, 1.0))
    return out if out.ndim else float(out)


def smooth_sat_deriv(x, params: SmoothSatParams):
    x = np.asarray(x, dtype=float)
    e = params.eps_s
    dx = params.x2 - x
    rad = np.sqrt(np.maximum(e * e - dx * dx, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        arc = np.where(rad > 0, dx / np.where(rad > 0, rad, 1.0), 1.0)
    out = np.where(x < params.x1, 1.0, np.where(x < params.x2, arc, 0.0))
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)
