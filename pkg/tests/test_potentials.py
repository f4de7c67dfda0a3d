import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tubeswarm.exceptions import CoincidentPositions, ConfigError, PanelTouchesPoint
from tubeswarm.gradcheck import (check_boundary_barriers, check_line_integral, central_difference,
                                 sample_clear_points)
from tubeswarm.potentials import (AvoidanceParams, PanelParams, TubeKeepParams, avoidance_term,
                                  line_integral_lyapunov, line_integral_lyapunov_many, pair_barrier,
                                  panel_gradient, panel_potential, tube_boundary_barriers,
                                  unified_barrier_profile, unified_tube_barrier)
from tubeswarm.tube import build_tube_from_waypoints


# ------------------------------------------------------------- line integral
def test_line_integral_unsaturated_closed_form(straight_tube):
    # v_m large enough that k1 |l| eta never saturates
    rng = np.random.default_rng(0)
    P = np.column_stack([rng.uniform(0, 10, 200), rng.uniform(-1.9, 1.9, 200)])
    l = straight_tube.locate(P)["l"]
    V = line_integral_lyapunov_many(straight_tube, P, k1=0.7, v_m=100.0)
    np.testing.assert_allclose(V, 0.5 * 0.7 * l ** 2, rtol=1e-12, atol=1e-14)


def test_line_integral_zero_only_on_finish(straight_tube):
    assert line_integral_lyapunov(straight_tube, [10.0, 0.5], 1.0, 1.0) == 0.0
    assert line_integral_lyapunov(straight_tube, [9.999, 0.5], 1.0, 1.0) > 0
    assert line_integral_lyapunov(straight_tube, [10.001, 0.5], 1.0, 1.0) > 0


def _path_integral(tube, y, k1, v_m, n=20_001):
    """Oracle: integrate the saturated field along the offset curve from the finish to ``y``.

    Uses only ``locate`` and frames, not the reduced one-dimensional formula.
    """
    loc = tube.locate(np.asarray(y)[None])
    s = np.linspace(loc["s"][0], tube.length, n)
    f = tube.frames_at(s)
    X = f["p"] + loc["lam"][0] * f["n"]
    q = tube.locate(X)
    field = k1 * (q["l"] * q["eta"])[:, None] * q["t_c"]
    norm = np.linalg.norm(field, axis=1)
    field *= np.minimum(1.0, v_m / np.maximum(norm, 1e-300))[:, None]
    mid = 0.5 * (field[1:] + field[:-1])
    return float(-np.sum(np.einsum("ij,ij->i", mid, np.diff(X, axis=0))))


@pytest.mark.parametrize("tube_name", ["arc_tube", "sine_tube"])
def test_line_integral_matches_path_integral(request, tube_name):
    tube = request.getfixturevalue(tube_name)
    rng = np.random.default_rng(1)
    # the offset curve of the interpolated frames differs from (1 - kappa lam) ds at
    # second order in the station spacing, ~1e-5 relative on these tubes
    for p in sample_clear_points(tube, 12, 0.1, rng, s_margin=0.2):
        assert line_integral_lyapunov(tube, p, 1.0, 1.5) == pytest.approx(_path_integral(tube, p, 1.0, 1.5), rel=1e-4)


def test_line_integral_bound_in_saturated_regime(straight_tube, arc_tube, sine_tube):
    k1, v_m = 1.0, 1.5
    rng = np.random.default_rng(2)
    for tube in (straight_tube, arc_tube, sine_tube):
        P = sample_clear_points(tube, 500, 0.01, rng, s_margin=0.0)
        l = tube.locate(P)["l"]
        sat = np.abs(l) >= 2 * v_m / (k1 * tube.eta_max)
        V = line_integral_lyapunov_many(tube, P[sat], k1, v_m)
        assert np.all(V >= v_m / tube.eta_max * np.abs(l[sat]) - 1e-8)


def test_line_integral_grows_with_distance():
    # straight tubes of growing length: V at the start grows with |l|
    values = [line_integral_lyapunov(build_tube_from_waypoints([[0, 0], [L, 0]], 1.0), [0.0, 0.0], 1.0, 1.0)
              for L in (1.0, 2.0, 4.0, 8.0, 16.0)]
    assert np.all(np.diff(values) > 0)
    # bounded V on a grid implies bounded |l|: sublevel sets stay near the finish
    tube = build_tube_from_waypoints([[0, 0], [30, 0]], 1.0)
    x = np.linspace(-5, 40, 451)
    V = line_integral_lyapunov_many(tube, np.column_stack([x, np.zeros_like(x)]), 1.0, 1.0)
    assert np.all(np.abs(x[V <= 2.0] - 30.0) <= 2.5 + 1e-9)


def test_line_integral_gradient_on_straight_tube():
    assert check_line_integral(n=50) <= 1e-5


def test_line_integral_rejects_bad_gains(straight_tube):
    with pytest.raises(ConfigError):
        line_integral_lyapunov(straight_tube, [1.0, 0.0], 0.0, 1.0)


# --------------------------------------------------------------- pair barrier
def _pair_oracle(d, k2, eps_m, eps_s, r_s, r_a):
    """Barrier evaluated from scratch: cubic step times 1/((1+eps_m) d - 2 r_s s(d / 2 r_s))."""
    d1, d2 = 2 * r_s, r_s + r_a
    if d >= d2:
        return 0.0
    if d <= d1:
        sigma = 1.0
    else:
        x = (d - d1) / (d2 - d1)
        sigma = 1 - 3 * x ** 2 + 2 * x ** 3
    x = d / (2 * r_s)
    x2 = 1 + eps_s / np.tan(np.radians(67.5))
    x1 = x2 - eps_s * np.sin(np.radians(45))
    s = x if x < x1 else (1 - eps_s + np.sqrt(eps_s ** 2 - (x - x2) ** 2) if x < x2 else 1.0)
    return k2 * sigma / ((1 + eps_m) * d - 2 * r_s * s)


PAIR_AT_ONE = 2.4999875000625  # k2 = 1, eps_m = eps_s = 1e-6, r_s = 0.4, r_a = 0.8, |p~| = 1


def test_pair_barrier_regression_constant():
    V, b = pair_barrier([0.0, 0.0], [1.0, 0.0], AvoidanceParams())
    assert V == pytest.approx(PAIR_AT_ONE, rel=1e-12)
    assert V == pytest.approx(_pair_oracle(1.0, 1.0, 1e-6, 1e-6, 0.4, 0.8), rel=1e-12)
    assert b > 0


@settings(max_examples=300)
@given(st.floats(0.01, 2.0), st.floats(0.05, 0.5), st.floats(0.1, 1.0))
def test_pair_barrier_matches_oracle(d, r_s, extra):
    params = AvoidanceParams(k2=1.3, eps_m=1e-3, eps_s=1e-3, r_s=r_s, r_a=r_s + extra)
    V, b = pair_barrier([0.0, 0.0], [d, 0.0], params)
    assert V == pytest.approx(_pair_oracle(d, 1.3, 1e-3, 1e-3, r_s, r_s + extra), rel=1e-9)
    assert b >= 0


def test_pair_barrier_examples():
    params = AvoidanceParams()
    assert pair_barrier([0, 0], [params.cutoff + 0.01, 0], params) == (0.0, 0.0)
    d = 2 * params.r_s * 0.99
    V, _ = pair_barrier([0, 0], [0, d], params)
    assert V == pytest.approx(params.k2 / (params.eps_m * d), rel=1e-9)
    with pytest.raises(CoincidentPositions):
        pair_barrier([1, 1], [1, 1], params)


def test_pair_barrier_nonincreasing():
    params = AvoidanceParams(eps_m=1e-3, eps_s=1e-3)
    d = np.linspace(0.05, 1.5, 20_000)
    V = np.array([pair_barrier([0, 0], [x, 0], params)[0] for x in d])
    assert np.all(np.diff(V) <= 1e-12 * V[:-1])
    assert np.all(V[d >= params.cutoff] == 0) and np.all(V[d < params.cutoff - 1e-3] > 0)


def test_avoidance_term_scalar_and_vector_paths_agree():
    params = AvoidanceParams(eps_m=1e-3)
    rng = np.random.default_rng(3)
    p = np.zeros(2)
    others = rng.uniform(-1.1, 1.1, (20, 2))
    others = others[np.linalg.norm(others, axis=1) > 0.85]
    g_vec, v_vec = avoidance_term(p, others, params)
    g_sum = sum(-pair_barrier(p, q, params)[1] * (p - q) for q in others)
    v_sum = sum(pair_barrier(p, q, params)[0] for q in others)
    np.testing.assert_allclose(g_vec, g_sum, rtol=1e-12)
    assert v_vec == pytest.approx(v_sum, rel=1e-12)
    g_few, v_few = avoidance_term(p, others[:5], params)
    np.testing.assert_allclose(g_few, sum(-pair_barrier(p, q, params)[1] * (p - q) for q in others[:5]), rtol=1e-12)


# ---------------------------------------------------------------------- panel
FIG7 = PanelParams(anchor=(0.0, 0.0), direction=(0.0, 1.0), g1=-1.0, g2=1.0, d=0.0)


def test_panel_value_fig7_configuration():
    closed = np.log(2) - 2 + np.pi / 2  # integral of ln sqrt(1 + x^2) over [-1, 1]
    n = 1_000_000
    x = -1 + (np.arange(n) + 0.5) * (2 / n)
    riemann = np.sum(0.5 * np.log1p(x * x)) * (2 / n)
    value = panel_potential([1.0, 0.0], FIG7)
    assert value == pytest.approx(closed, abs=1e-12)
    assert value == pytest.approx(riemann, abs=1e-10)
    g = panel_gradient([1.0, 0.0], FIG7)
    assert abs(g[1]) <= 1e-14 * abs(g[0])
    g = panel_gradient([0.0, 2.0], FIG7)
    assert abs(g[0]) <= 1e-14 * abs(g[1])


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 3), st.floats(-2, 2), st.floats(0.1, 3), st.floats(0, 0.5),
       st.floats(0, 2 * np.pi))
def test_panel_matches_scipy_quad(x, gap, g1, length, d, angle):
    t = np.array([np.cos(angle), np.sin(angle)])
    a = np.array([0.3, -0.2])
    g2 = g1 + length
    # put p at distance d + gap from the closest point of the segment
    xs = np.clip(x, g1, g2)
    normal = np.array([-t[1], t[0]])
    p = a + x * t + np.sqrt(max((d + gap) ** 2 - (x - xs) ** 2, 0.0)) * normal
    if np.min(np.linalg.norm(p - (a + np.linspace(g1, g2, 2001)[:, None] * t), axis=1)) <= d + 1e-3:
        return
    f = lambda u: np.log(np.linalg.norm(p - a - u * t) - d)
    ref, _ = quad(f, g1, g2, points=[xs], epsabs=1e-13, epsrel=1e-13, limit=200)
    panel = PanelParams(tuple(a), tuple(t), g1, g2, d)
    assert panel_potential(p, panel) == pytest.approx(ref, abs=1e-10)
    # reversed limits flip the sign
    assert panel_potential(p, PanelParams(tuple(a), tuple(t), g2, g1, d)) == pytest.approx(-ref, abs=1e-10)


def test_panel_touching_point_raises():
    with pytest.raises(PanelTouchesPoint):
        panel_potential([0.2, 0.5], PanelParams((0, 0), (0, 1), -1, 1, 0.3))
    with pytest.raises(ConfigError):
        PanelParams((0, 0), (0, 2), -1, 1)


# ------------------------------------------------------------ tube keeping
def test_boundary_barriers_symmetric_on_midline(straight_tube):
    # symmetric extents: single panels ahead of the robot pull back, the sum does not
    sym = TubeKeepParams(l_l=-1.6, r_l=-1.6, l_r=1.6, r_r=1.6, check_directions=False)
    for params in (sym, TubeKeepParams()):
        bb = tube_boundary_barriers(straight_tube, [5.0, 0.0], params)
        # a straight wall looks the same after sliding along it
        assert abs(bb.gradient @ bb.t_c) <= 1e-8 * np.linalg.norm(bb.grad_l)
        assert abs(bb.gradient[1]) <= 1e-9 * np.linalg.norm(bb.grad_l)
    ml, mr = bb.directional_margins()
    assert ml.min() > 0 and mr.min() > 0


def test_boundary_barrier_pushes_off_the_near_wall(straight_tube):
    params = TubeKeepParams(r_s=0.3, r_a=0.8)
    lam = 2.0 - params.r_a / 2
    bb = tube_boundary_barriers(straight_tube, [5.0, lam], params)
    n_c = np.array([0.0, 1.0])
    assert bb.grad_r @ n_c > 0          # -grad points away from the +n_c wall
    assert -(bb.grad_r @ bb.t_c) >= -1e-8 * np.linalg.norm(bb.grad_r)
    ml, mr = bb.directional_margins()
    assert ml.min() >= 0 and mr.min() >= 0


def test_boundary_barrier_gradient(sine_tube):
    assert check_boundary_barriers(sine_tube, n=10) <= 1e-5


def test_unified_barrier_regimes(straight_tube):
    params = TubeKeepParams()
    rsp = straight_tube.modified_safety_radius(params.r_s)
    far = unified_tube_barrier(straight_tube, [5.0, 0.5], params, rsp)
    assert far.V_t == 0.0 and np.all(far.c == 0.0)
    # d_t = 0.9 r_s' sits on the linear branch of the smooth saturation
    y = 2.0 - 0.9 * rsp
    near = unified_tube_barrier(straight_tube, [5.0, y], params, rsp)
    assert near.d_t == pytest.approx(0.9 * rsp)
    assert near.V_t == pytest.approx(params.k3 / (params.eps_t * near.d_t), rel=1e-9)
    assert near.c[1] > 0 and abs(near.c[0]) < 1e-6 * near.c[1]


def test_unified_barrier_monotone_and_blows_up():
    params = TubeKeepParams(eps_t=1e-3, eps_s=1e-3)
    d = np.linspace(1e-4, 1.2, 50_000)
    V, dV = unified_barrier_profile(d, 0.4, params)
    assert np.all(np.diff(V) <= 1e-12 * V[:-1]) and np.all(dV <= 0)
    sweep = unified_barrier_profile(np.logspace(-1, -9, 200), 0.4, params)[0]
    assert np.all(np.diff(sweep) > 0) and sweep[-1] > 1e6
    assert unified_barrier_profile(0.0, 0.4, params)[0] == np.inf


def test_unified_barrier_float_and_array_paths_agree():
    params = TubeKeepParams(eps_t=1e-3, eps_s=1e-3)
    d = np.linspace(0.01, 1.0, 500)
    V, dV = unified_barrier_profile(d, 0.4, params)
    for k in range(0, 500, 7):
        v, dv = unified_barrier_profile(float(d[k]), 0.4, params)
        assert v == pytest.approx(V[k], rel=1e-13) and dv == pytest.approx(dV[k], rel=1e-12, abs=1e-15)


def test_unified_barrier_gradient_by_hand(sine_tube):
    params = TubeKeepParams()
    rsp = sine_tube.modified_safety_radius(params.r_s)
    rng = np.random.default_rng(4)
    pts = sample_clear_points(sine_tube, 400, params.r_s, rng)
    pts = pts[(sine_tube.locate(pts)["d_t"] > rsp + 0.01) & (sine_tube.locate(pts)["d_t"] < params.r_a)][:20]
    assert len(pts) >= 5
    for p in pts:
        ub = unified_tube_barrier(sine_tube, p, params, rsp)
        fd = central_difference(lambda q: unified_tube_barrier(sine_tube, q, params, rsp).V_t, p)
        assert np.linalg.norm(ub.c - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-3)


def test_params_validation():
    with pytest.raises(ConfigError):
        AvoidanceParams(r_s=0.8, r_a=0.4)
    with pytest.raises(ConfigError):
        TubeKeepParams(l_l=1.0)
    with pytest.raises(ConfigError):
        unified_barrier_profile(0.3, 0.9, TubeKeepParams())
