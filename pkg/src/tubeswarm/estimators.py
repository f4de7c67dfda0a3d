"""scikit-learn style wrappers around the tube, the controllers and the baseline.

The tube is a constructor parameter, so ``clone`` and ``get_params`` behave
as usual. ``fit`` builds the controller (and optionally checks a set of
starting positions); ``predict`` maps robot positions to velocity commands.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .baseline_cbf import CBFParams, CBFSwarmController
from .controller import ControllerConfig, SwarmController, SwarmState
from .exceptions import ConfigError, GeometryError
from .tube import VirtualTube

FRAME_COLUMNS = ("s", "l", "lam", "eta", "d_t", "inside")


def _check_tube(tube) -> VirtualTube:
    if tube is None:
        raise ConfigError("a tube is required")
    if isinstance(tube, dict):
        return VirtualTube.from_dict(tube)
    if not isinstance(tube, VirtualTube):
        raise ConfigError(f"expected a VirtualTube, got {type(tube).__name__}")
    return tube


def _check_positions(X):
    return check_array(X, dtype=float, ensure_min_samples=1)


class _SwarmEstimator(BaseEstimator):
    """Shared parameter handling for the two controllers."""

    def _state(self, X, finished=None):
        P = _check_positions(X)
        if P.shape[1] != 2:
            raise ValueError(f"positions must have 2 columns, got {P.shape[1]}")
        return SwarmState(P, self.r_s, self.r_a, self.v_m, finished)

    def _fit_common(self, X):
        self.tube_ = _check_tube(self.tube)
        self.config_ = ControllerConfig(
            variant=self.variant, k1=self.k1, k2=self.k2, k3=self.k3, eps_m=self.eps_m,
            eps_t=self.eps_t, eps_s=self.eps_s, rho=self.rho, eps0=self.eps0)
        if X is not None:
            state = self._state(X)
            loc = self.tube_.locate(state.positions)
            clearance = self.tube_.boundary_distance(state.positions)
            bad = np.nonzero(~loc["inside"] | (clearance <= state.r_s))[0]
            if len(bad):
                raise GeometryError(f"safety areas not inside the tube for robots {bad[:10].tolist()}")
            self.n_features_in_ = 2


class TubeSwarmController(_SwarmEstimator):
    """Distributed tube-passing controller as an estimator.

    Parameters
    ----------
    tube : VirtualTube
    variant : {"modified", "full"}
    r_s, r_a, v_m : float or array of shape (M,)
        Safety radius, avoidance radius and speed limit of the robots.
    k1, k2, k3, eps_m, eps_t, eps_s, rho, eps0
        Controller gains and options; see :class:`ControllerConfig`.
    """

    def __init__(self, tube=None, variant="modified", r_s=0.4, r_a=0.8, v_m=1.0, k1=1.0,
                 k2=1.0, k3=1.0, eps_m=1e-6, eps_t=1e-6, eps_s=1e-6, rho=None, eps0=0.1):
        self.tube = tube
        self.variant = variant
        self.r_s = r_s
        self.r_a = r_a
        self.v_m = v_m
        self.k1 = k1
        self.k2 = k2
        self.k3 = k3
        self.eps_m = eps_m
        self.eps_t = eps_t
        self.eps_s = eps_s
        self.rho = rho
        self.eps0 = eps0

    def fit(self, X=None, y=None):
        """Build the controller; if ``X`` is given, check those positions start inside."""
        self._fit_common(X)
        self.controller_ = SwarmController(self.tube_, self.config_)
        return self

    def predict(self, X, finished=None) -> np.ndarray:
        """Velocity commands of shape (M, 2) for positions ``X``."""
        check_is_fitted(self, "controller_")
        state = self._state(X, finished)
        self.controller_.update_finished(state)
        return self.controller_.velocities(state)

    def commands(self, X, finished=None) -> list:
        """Per-robot :class:`ControlCommand` objects with all terms."""
        check_is_fitted(self, "controller_")
        state = self._state(X, finished)
        self.controller_.update_finished(state)
        return self.controller_.commands(state)


class CBFController(_SwarmEstimator):
    """Control-barrier-function QP baseline, distributed or centralized."""

    def __init__(self, tube=None, mode="distributed", r_s=0.4, r_a=0.8, v_m=1.0, gamma=1.0,
                 share=0.5, k1=1.0, k2=1.0, k3=1.0, eps_m=1e-6, eps_t=1e-6, eps_s=1e-6,
                 rho=None, eps0=0.1):
        self.tube = tube
        self.mode = mode
        self.r_s = r_s
        self.r_a = r_a
        self.v_m = v_m
        self.gamma = gamma
        self.share = share
        self.k1 = k1
        self.k2 = k2
        self.k3 = k3
        self.eps_m = eps_m
        self.eps_t = eps_t
        self.eps_s = eps_s
        self.rho = rho
        self.eps0 = eps0

    # the baseline reuses the tube-keeping radius of the modified controller
    variant = "modified"

    def fit(self, X=None, y=None):
        if self.mode not in ("distributed", "centralized"):
            raise ConfigError(f"mode must be 'distributed' or 'centralized', got {self.mode!r}")
        self._fit_common(X)
        self.controller_ = CBFSwarmController(self.tube_, self.config_,
                                              CBFParams(self.gamma, self.share))
        return self

    def predict(self, X, finished=None) -> np.ndarray:
        """Velocity commands of shape (M, 2); infeasible robots get zero."""
        U, _ = self.predict_with_flags(X, finished)
        return U

    def predict_with_flags(self, X, finished=None):
        """Return ``(U, infeasible)``; ``infeasible`` is per robot when distributed."""
        check_is_fitted(self, "controller_")
        state = self._state(X, finished)
        self.controller_.base.update_finished(state)
        if self.mode == "centralized":
            return self.controller_.centralized(state)
        U = np.zeros((len(state), 2))
        flags = np.zeros(len(state), dtype=bool)
        for i in range(len(state)):
            U[i], flags[i] = self.controller_.command(state, i)
        return U, flags


class TubeFrameTransformer(TransformerMixin, BaseEstimator):
    """Map points to tube coordinates.

    Output columns are ``s, l, lam, eta, d_t, inside`` (see ``FRAME_COLUMNS``):
    arc length of the foot point, signed length to the finish, lateral offset,
    scaling factor, distance error to the tube edge, and a 0/1 inside flag.
    """

    def __init__(self, tube=None):
        self.tube = tube

    def fit(self, X=None, y=None):
        self.tube_ = _check_tube(self.tube)
        if X is not None:
            self.n_features_in_ = _check_positions(X).shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "tube_")
        P = _check_positions(X)
        if P.shape[1] != 2:
            raise ValueError(f"points must have 2 columns, got {P.shape[1]}")
        loc = self.tube_.locate(P)
        return np.column_stack([loc[k].astype(float) for k in FRAME_COLUMNS])

    def inverse_transform(self, X) -> np.ndarray:
        """Points from ``(s, lam)`` in the first and third columns."""
        check_is_fitted(self, "tube_")
        Z = check_array(X, dtype=float)
        f = self.tube_.frames_at(Z[:, 0])
        return f["p"] + Z[:, 2:3] * f["n"]

    def get_feature_names_out(self, input_features=None):
        return np.array(FRAME_COLUMNS, dtype=object)
