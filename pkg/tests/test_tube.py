import json

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import arc_points, brute_force_proper, geometry_suite
from tubeswarm.exceptions import (ConfigError, DegenerateSpacing, EmptyTrajectory, ImproperTube,
                                  SelfIntersectingCurve, TubeTooNarrow)
from tubeswarm.simulator import load_scenario
from tubeswarm.tube import (build_tube_from_trajectory, build_tube_from_waypoints, load_tube,
                            project, save_tube, validate_proper)

SINE_RS_PRIME = 0.4000395727463122


def in_tube_points(tube, n, rng, shrink=0.999):
    s = rng.uniform(0.0, tube.length, n)
    f = tube.frames_at(s)
    lam = f["lambda_l"] + rng.uniform(1 - shrink, shrink, n) * (f["lambda_r"] - f["lambda_l"])
    return f["p"] + lam[:, None] * f["n"]


# -------------------------------------------------------------- construction
def test_straight_tube_frames():
    tube = build_tube_from_waypoints([[0, 0], [10, 0]], 1.0, 0.5)
    c = tube.curve
    assert len(c) == 21
    np.testing.assert_allclose(c.tangents, np.tile([1.0, 0.0], (21, 1)), atol=1e-15)
    np.testing.assert_allclose(c.normals, np.tile([0.0, 1.0], (21, 1)), atol=1e-15)
    np.testing.assert_allclose(c.curvature, 0.0, atol=1e-15)
    np.testing.assert_allclose(tube.r_t, 1.0)


@pytest.mark.parametrize("name", ["straight", "arc", "sine", "swarm20", "teach"])
def test_curve_and_tube_invariants(name):
    tube = {n: t for n, t, _ in geometry_suite()}[name]
    c = tube.curve
    np.testing.assert_allclose(np.linalg.norm(c.tangents, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.sum(c.tangents * c.normals, axis=1), 0.0, atol=1e-12)
    assert np.all(np.diff(c.l) > 0) and c.l[-1] == 0.0
    assert np.linalg.norm(c.start - c.finish) > 0
    np.testing.assert_allclose(tube.r_t, 0.5 * np.abs(tube.lambda_r - tube.lambda_l))
    np.testing.assert_allclose(tube.mid, 0.5 * (tube.p_l + tube.p_r))
    assert np.all(tube.lambda_l < 0) and np.all(tube.lambda_r > 0)


def test_arc_curvature_is_exact(arc_tube):
    np.testing.assert_allclose(arc_tube.curve.curvature, 1 / 8.0, rtol=1e-10)


def test_sine_curvature_matches_analytic(sine_tube):
    x = sine_tube.curve.points[:, 0]
    w = 2 * np.pi / 24.0
    yp, ypp = 1.5 * w * np.cos(w * x), -1.5 * w * w * np.sin(w * x)
    np.testing.assert_allclose(sine_tube.curve.curvature, ypp / (1 + yp ** 2) ** 1.5, atol=1e-4)


def test_builder_errors():
    with pytest.raises(DegenerateSpacing):
        build_tube_from_waypoints([[0, 0]], 1.0)
    with pytest.raises(DegenerateSpacing):
        build_tube_from_waypoints([[0, 0], [1, 0]], 1.0, 0.0)
    with pytest.raises(SelfIntersectingCurve):
        build_tube_from_waypoints([[0, 0], [4, 0], [4, 4], [0, 4], [0, 0]], 0.5)
    with pytest.raises(SelfIntersectingCurve):
        build_tube_from_waypoints([[0, 0], [4, 4], [4, 0], [0, 4]], 0.5)
    with pytest.raises(TubeTooNarrow):
        build_tube_from_waypoints([[0, 0], [4, 0]], 0.0)
    with pytest.raises(EmptyTrajectory):
        build_tube_from_trajectory([[0, 0]])


def test_u_turn_is_improper_and_reports_stations():
    pts = arc_points(1.0, np.pi)
    with pytest.raises(ImproperTube) as info:
        build_tube_from_waypoints(pts, 2.0)
    assert info.value.stations
    tube = build_tube_from_waypoints(pts, 2.0, check=False)
    assert not brute_force_proper(tube)


@pytest.mark.parametrize("name, tube, proper", geometry_suite(), ids=lambda v: v if isinstance(v, str) else "")
def test_validate_proper_matches_brute_force(name, tube, proper):
    diag = validate_proper(tube)
    assert diag.ok == brute_force_proper(tube) == proper
    if not proper:
        assert diag.stations and "FAIL" in diag.summary()


def test_corner_fails_at_the_corner(improper_tube):
    diag = validate_proper(improper_tube)
    assert not diag.ok
    corner = improper_tube.curve.points[diag.stations]
    assert np.min(np.linalg.norm(corner - improper_tube.curve.points[np.argmax(np.abs(improper_tube.curve.curvature))], axis=1)) < 1.0


# ------------------------------------------------------------ from trajectory
def test_trajectory_between_parallel_walls():
    x = np.linspace(-2, 12, 1401)
    walls = np.concatenate([np.column_stack([x, np.full_like(x, 1.5)]),
                            np.column_stack([x, np.full_like(x, -1.5)])])
    tube = build_tube_from_trajectory([[0, 0], [10, 0]], walls, clearance_cap=3.0)
    # nearest-neighbour oracle per side
    d = np.linalg.norm(tube.curve.points[:, None] - walls[None], axis=2)
    upper = walls[:, 1] > 0
    np.testing.assert_allclose(tube.lambda_r, d[:, upper].min(axis=1), atol=1e-12)
    np.testing.assert_allclose(-tube.lambda_l, d[:, ~upper].min(axis=1), atol=1e-12)
    np.testing.assert_allclose(tube.r_t, 1.5, atol=1e-12)


def test_trajectory_without_obstacles_uses_cap():
    x = np.linspace(0, 10, 201)
    tube = build_tube_from_trajectory(np.column_stack([x, 0.5 * np.sin(x / 3)]), clearance_cap=2.0)
    np.testing.assert_allclose(tube.r_t, 2.0)


def test_kinked_trajectory_is_rejected():
    # cross sections on either side of a sharp corner overlap
    with pytest.raises(ImproperTube):
        build_tube_from_trajectory([[0, 0], [5, 1], [10, 0]], clearance_cap=2.0)


def test_teach_tube_contains_start_points():
    cfg = load_scenario("scenarios/teach_repeat.json")
    assert validate_proper(cfg.tube).ok
    loc = cfg.tube.locate(cfg.positions)
    assert np.all(loc["inside"]) and np.all(loc["l"] < 0)


# ----------------------------------------------------------------- projection
def test_project_straight_example(straight_tube):
    pr = project(straight_tube, [3.0, 0.4])
    np.testing.assert_allclose(pr.foot, [3.0, 0.0], atol=1e-12)
    assert pr.lam == pytest.approx(0.4) and pr.l == pytest.approx(-7.0)
    assert pr.eta == 1.0 and pr.d_t == pytest.approx(pr.r_t - 0.4)
    assert pr.inside and not pr.outside_longitudinally


def test_project_on_curve_with_asymmetric_widths():
    tube = build_tube_from_waypoints([[0, 0], [10, 0]], lambda s: (0.5, 1.5))
    pr = tube.project([4.0, 0.0])
    assert pr.lam == 0.0 and pr.eta == 1.0
    np.testing.assert_allclose(pr.mid, [4.0, 0.5], atol=1e-12)
    assert np.linalg.norm(np.array([4.0, 0.0]) - pr.mid) == pytest.approx(0.5)
    assert pr.d_t == pytest.approx(1.0 - 0.5)


def test_arc_eta(arc_tube):
    rng = np.random.default_rng(1)
    P = in_tube_points(arc_tube, 2000, rng)
    loc = arc_tube.locate(P)
    # exact against the reported foot frame
    np.testing.assert_allclose(loc["eta"], 1 / (1 - loc["kappa"] * loc["lam"]), rtol=1e-9)
    # against the true circle: the foot lies on a station chord, off by at most the sagitta
    R = 8.0
    r = np.hypot(P[:, 0], P[:, 1] - R)
    sagitta = 0.1 ** 2 / (8 * R)
    np.testing.assert_allclose(loc["lam"], R - r, atol=sagitta * 1.001)
    eta_true = R / r
    np.testing.assert_allclose(loc["eta"], eta_true, rtol=sagitta / (R - 2.0) * 1.01)


def test_eta_is_one_on_straight_tube(straight_tube):
    loc = straight_tube.locate(in_tube_points(straight_tube, 500, np.random.default_rng(2)))
    assert np.all(loc["eta"] == 1.0)


def test_eta_within_bounds(swarm_tube):
    loc = swarm_tube.locate(in_tube_points(swarm_tube, 5000, np.random.default_rng(3)))
    assert np.all((loc["eta"] >= swarm_tube.eta_min) & (loc["eta"] <= swarm_tube.eta_max))


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0005, 0.9995))
def test_round_trip_and_orthogonality(sine_tube, u, frac):
    s = u * sine_tube.length
    f = sine_tube.frames_at(np.array([s]))
    lam = f["lambda_l"][0] + frac * (f["lambda_r"][0] - f["lambda_l"][0])
    y = f["p"][0] + lam * f["n"][0]
    pr = sine_tube.project(y)
    assert np.linalg.norm(pr.foot + pr.lam * pr.n_c - y) <= 1e-9
    assert abs((y - pr.foot) @ pr.t_c) <= 1e-9
    assert pr.l == pytest.approx(pr.s - sine_tube.length, abs=1e-12)
    if 1e-9 < u < 1 - 1e-9:  # points on the start/finish caps may land either side
        assert pr.inside


def test_length_monotone_along_offset_curves(swarm_tube):
    s = np.linspace(0.05, swarm_tube.length - 0.05, 400)
    for frac in (0.05, 0.5, 0.95):
        f = swarm_tube.frames_at(s)
        lam = f["lambda_l"] + frac * (f["lambda_r"] - f["lambda_l"])
        l = swarm_tube.length_of(f["p"] + lam[:, None] * f["n"])
        assert np.all(np.diff(l) > 0)


def test_points_beyond_the_ends(straight_tube):
    pr = straight_tube.project([11.5, 0.3])
    assert pr.l == pytest.approx(1.5) and pr.outside_longitudinally and not pr.inside
    pr = straight_tube.project([-1.0, -0.3])
    assert pr.l == pytest.approx(-11.0) and pr.outside_longitudinally


# ------------------------------------------------------ modified safety radius
def test_modified_radius_on_straight_tube(straight_tube):
    assert straight_tube.modified_safety_radius(0.4) == pytest.approx(0.4, abs=1e-9)


def test_modified_radius_regression(sine_tube):
    assert sine_tube.modified_safety_radius(0.4) == pytest.approx(SINE_RS_PRIME, abs=1e-9)


def _threshold_oracle(tube, r_s, n_sections=400, n_lateral=4000):
    """Largest d_t at which a sampled cross-section point is within r_s of a wall."""
    walls = shapely.multilinestrings([shapely.LineString(tube.p_l), shapely.LineString(tube.p_r)])
    worst = 0.0
    f = tube.frames_at(np.linspace(0, tube.length, n_sections))
    for p, n, lo, hi in zip(f["p"], f["n"], f["lambda_l"], f["lambda_r"]):
        lam = np.linspace(lo, hi, n_lateral)
        Q = p + lam[:, None] * n
        close = shapely.distance(shapely.points(Q), walls) < r_s
        d_t = 0.5 * (hi - lo) - np.abs(lam - 0.5 * (lo + hi))
        if np.any(close):
            worst = max(worst, d_t[close].max())
    return worst


def test_modified_radius_on_tapering_tube():
    tube = build_tube_from_waypoints([[0, 0], [10, 0]], [2.0, 1.0])
    rsp = tube.modified_safety_radius(0.4)
    oracle = _threshold_oracle(tube, 0.4)
    # a tapering wall meets the cross section at an angle, so clearance needs a little more than r_s
    assert rsp > 0.4
    assert oracle <= rsp <= oracle + 1.5 * (2.0 / 4000)


def test_erosion_keeps_safety_disc_inside(swarm_tube):
    rsp = swarm_tube.modified_safety_radius(0.4)
    P = in_tube_points(swarm_tube, 20_000, np.random.default_rng(4))
    P = P[swarm_tube.locate(P)["d_t"] > rsp]
    walls = shapely.multilinestrings([shapely.LineString(swarm_tube.p_l), shapely.LineString(swarm_tube.p_r)])
    assert np.all(shapely.distance(shapely.points(P), walls) >= 0.4)


def test_modified_radius_too_wide(straight_tube):
    with pytest.raises(TubeTooNarrow):
        straight_tube.modified_safety_radius(2.5)


# --------------------------------------------------------------- file format
def test_json_round_trip_is_exact(tmp_path, sine_tube):
    path = tmp_path / "tube.json"
    save_tube(sine_tube, path, r_s=0.4)
    back = load_tube(path)
    for a, b in ((sine_tube.curve.points, back.curve.points), (sine_tube.curve.tangents, back.curve.tangents),
                 (sine_tube.curve.curvature, back.curve.curvature), (sine_tube.lambda_l, back.lambda_l),
                 (sine_tube.lambda_r, back.lambda_r), (sine_tube.curve.s, back.curve.s)):
        assert np.array_equal(a, b)
    assert back.modified_safety_radius(0.4) == sine_tube.modified_safety_radius(0.4)
    data = json.loads(path.read_text())
    assert set(data["stations"][0]) == {"p", "t_c", "n_c", "kappa", "s", "l", "lambda_l", "lambda_r"}
    assert data["stations"][-1]["l"] == 0.0
    P = in_tube_points(sine_tube, 50, np.random.default_rng(5))
    assert np.array_equal(back.locate(P)["l"], sine_tube.locate(P)["l"])


def test_load_tube_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_tube(bad)
    bad.write_text('{"name": "x"}')
    with pytest.raises(ConfigError):
        load_tube(bad)
