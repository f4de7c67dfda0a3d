"""Swarm navigation through curve virtual tubes."""
from .baseline_cbf import CBFParams, CBFSwarmController, active_set_solve, timing_benchmark
from .controller import ControlCommand, ControllerConfig, RobotParams, SwarmController, SwarmState
from .estimators import CBFController, TubeFrameTransformer, TubeSwarmController
from .exceptions import (ConfigError, GeometryError, ImproperTube, Infeasible, SafetyViolation,
                         TubeSwarmError)
from .potentials import (AvoidanceParams, PanelParams, TubeKeepParams, line_integral_lyapunov,
                         pair_barrier, panel_gradient, panel_potential, tube_boundary_barriers,
                         unified_tube_barrier)
from .simulator import ScenarioConfig, Simulator, load_scenario, metrics, run
from .tube import (VirtualTube, build_sine_tube, build_tube_from_trajectory,
                   build_tube_from_waypoints, load_tube, project, save_tube, validate_proper)

__version__ = "0.1.0"

__all__ = [
    "AvoidanceParams", "CBFController", "CBFParams", "CBFSwarmController", "ConfigError",
    "ControlCommand", "ControllerConfig", "GeometryError", "ImproperTube", "Infeasible",
    "PanelParams", "RobotParams", "SafetyViolation", "ScenarioConfig", "Simulator",
    "SwarmController", "SwarmState", "TubeFrameTransformer", "TubeKeepParams", "TubeSwarmController",
    "TubeSwarmError", "VirtualTube", "active_set_solve", "build_sine_tube",
    "build_tube_from_trajectory", "build_tube_from_waypoints", "line_integral_lyapunov",
    "load_scenario", "load_tube", "metrics", "pair_barrier", "panel_gradient", "panel_potential",
    "project", "run", "save_tube", "timing_benchmark", "tube_boundary_barriers",
    "unified_tube_barrier", "validate_proper",
]
