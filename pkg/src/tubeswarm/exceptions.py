"""Exception hierarchy.

Geometry problems derive from :class:`GeometryError` so the CLI can map the
whole family to one exit code.
"""


class TubeSwarmError(Exception):
    pass


class ConfigError(TubeSwarmError, ValueError):
    pass


class GeometryError(TubeSwarmError, ValueError):
    pass


class SelfIntersectingCurve(GeometryError):
    pass


class ImproperTube(GeometryError):
    def __init__(self, message, stations=()):
        super().__init__(message)
        self.stations = tuple(stations)


class DegenerateSpacing(GeometryError):
    pass


class EmptyTrajectory(GeometryError):
    pass


class TubeTooNarrow(GeometryError):
    pass


class ProjectionFailed(GeometryError):
    pass


class PanelTouchesPoint(GeometryError):
    pass


class DirectionalConstraintViolated(GeometryError):
    def __init__(self, message, station=None, value=None):
        super().__init__(message)
        self.station = station
        self.value = value


class EpsilonOutOfRange(ConfigError):
    pass


class CoincidentPositions(TubeSwarmError, ValueError):
    pass


class Infeasible(TubeSwarmError):
    pass


class SafetyViolation(TubeSwarmError):
    """Raised by the simulator; ``log`` holds everything recorded up to the abort."""

    def __init__(self, message, log=None, step=None):
        super().__init__(message)
        self.log = log
        self.step = step
