import numpy as np
import pytest
import shapely

from tubeswarm.simulator import load_scenario, resolve_path
from tubeswarm.tube import build_sine_tube, build_tube_from_waypoints, load_tube


def arc_points(radius, angle, spacing=0.1):
    """Counter-clockwise arc heading +x at the origin, with chords of exactly ``spacing``.

    Resampling at the same spacing then keeps every station on the circle.
    """
    step = 2.0 * np.arcsin(spacing / (2.0 * radius))
    th = -np.pi / 2 + step * np.arange(int(round(angle / step)) + 1)
    return np.column_stack([radius * np.cos(th), radius + radius * np.sin(th)])


def record(config, line):
    """Stash a line for the acceptance summary printed after the run."""
    if not hasattr(config, "_acceptance_lines"):
        config._acceptance_lines = []
    config._acceptance_lines.append(line)
    print(line)


@pytest.fixture(scope="session")
def straight_tube():
    return build_tube_from_waypoints([[0.0, 0.0], [10.0, 0.0]], 2.0)


@pytest.fixture(scope="session")
def arc_tube():
    # radius 8, turning left by 90 degrees, half-width 2
    return build_tube_from_waypoints(arc_points(8.0, np.pi / 2), 2.0)


@pytest.fixture(scope="session")
def sine_tube():
    return build_sine_tube(20.0, 1.5, 24.0, 3.0)


@pytest.fixture(scope="session")
def swarm_tube():
    return load_scenario("scenarios/swarm20_sine.json").tube


@pytest.fixture(scope="session")
def improper_tube():
    return load_tube(resolve_path("tubes/improper_corner.json"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


def brute_force_proper(tube) -> bool:
    """True when no two station cross sections intersect (shapely segment test)."""
    sections = shapely.linestrings(np.stack([tube.p_l, tube.p_r], axis=1))
    left, right = shapely.STRtree(sections).query(sections, predicate="intersects")
    return not np.any(left < right)


def geometry_suite():
    """Ten tubes as ``(name, tube, proper)``; improper ones are built unchecked."""
    corner = [[0.0, 0.0], [5.0, 0.0], [5.0, 5.0]]
    zigzag = [[0, 0], [2, 1.5], [4, 0], [6, 1.5], [8, 0]]
    swarm = load_scenario("scenarios/swarm20_sine.json").tube
    teach = load_scenario("scenarios/teach_repeat.json").tube
    return [
        ("straight", build_tube_from_waypoints([[0.0, 0.0], [10.0, 0.0]], 2.0), True),
        ("arc", build_tube_from_waypoints(arc_points(8.0, np.pi / 2), 2.0), True),
        ("sine", build_sine_tube(20.0, 1.5, 24.0, 3.0), True),
        ("swarm20", swarm, True),
        ("teach", teach, True),
        ("u_turn", build_tube_from_waypoints(arc_points(1.0, np.pi), 2.0, check=False), False),
        ("corner", build_tube_from_waypoints(corner, 1.0, check=False), False),
        ("tight_sine", build_sine_tube(12.0, 1.5, 6.0, 1.5, check=False), False),
        ("zigzag", build_tube_from_waypoints(zigzag, 1.0, check=False), False),
        ("wide_arc", build_tube_from_waypoints(arc_points(3.0, np.pi / 2), lambda s: (0.5, 3.5), check=False), False),
    ]
