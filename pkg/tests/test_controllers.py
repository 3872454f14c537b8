import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from racebench.controllers import (CONTROLLERS, GapFollower, GapFollowerParams, LqrController,
                                   MpcController, NoConvergence, NoGap, PurePursuit, dare_solve,
                                   find_widest_gap, finite_horizon_gain, gap_follower_step,
                                   lateral_model, lqr_gain, lqr_step, make_controller, mpc_step,
                                   pure_pursuit_step, pursuit_curvature, riccati_gain)
from racebench.messages import DriveCommand, Pose2D, Scan
from racebench.paths import PathExhausted, ReferencePath
from racebench.sim import VehicleParams, VehicleState, step

V = VehicleParams()


def scan_of(ranges, fov=math.pi):
    n = len(ranges)
    return Scan(0.0, -fov / 2, fov / 2, fov / (n - 1), 0.0, 30.0, ranges)


def straight_path(length=50.0, speed=2.0, closed=False, ds=0.5):
    xs = np.arange(0.0, length + ds / 2, ds)
    return ReferencePath(np.column_stack([xs, np.zeros_like(xs), np.full_like(xs, speed)]), closed)


def circle_path(radius=5.0, n=400, speed=3.0):
    a = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return ReferencePath(np.column_stack([radius * np.cos(a), radius * np.sin(a),
                                          np.full(n, speed)]), closed=True)


# -- gap follower ---------------------------------------------------------------

def test_symmetric_corridor_steers_straight():
    ranges = [1.0, 1.2, 2.0, 4.0, 8.0, 4.0, 2.0, 1.2, 1.0]
    out = gap_follower_step(scan_of(ranges), GapFollowerParams(bubble_radius=0.01), V)
    assert out.cmd.steering_angle == pytest.approx(0.0, abs=1e-12)


def longest_run_brute_force(ranges, threshold):
    best = None
    for i in range(len(ranges)):
        for j in range(i, len(ranges)):
            if all(r > threshold for r in ranges[i:j + 1]):
                if best is None or j - i > best[1] - best[0]:
                    best = (i, j)
    return best


def test_widest_gap_example():
    ranges = [1, 1, 1, 10, 10, 10, 10, 1, 1]
    params = GapFollowerParams(gap_threshold=1.5)
    s = scan_of(ranges)
    lo, hi = longest_run_brute_force(ranges, 1.5)
    assert (lo, hi) == (3, 6)
    expected = s.angle_min + 0.5 * (lo + hi) * s.angle_increment
    assert expected == pytest.approx(-math.pi / 2 + 4.5 * math.pi / 8)
    out = gap_follower_step(s, params, V)
    assert out.raw_steering == pytest.approx(expected)
    assert out.cmd.steering_angle == pytest.approx(min(expected, V.max_steer))


@given(st.lists(st.floats(0.0, 12.0), min_size=1, max_size=40), st.floats(0.1, 5.0))
def test_find_widest_gap_matches_brute_force(ranges, threshold):
    assert find_widest_gap(np.array(ranges), threshold) == longest_run_brute_force(ranges, threshold)


def test_all_blocked_raises_no_gap_and_controller_stops():
    s = scan_of([0.1] * 9)
    params = GapFollowerParams(gap_threshold=1.0)
    with pytest.raises(NoGap):
        gap_follower_step(s, params, V)
    out = GapFollower(V, params)(VehicleState(Pose2D(0, 0)), s, 1.0)
    assert (out.cmd.speed, out.cmd.steering_angle) == (0.0, 0.0)


def test_gap_follower_slows_when_turning():
    p = GapFollowerParams(bubble_radius=0.01)
    ahead = gap_follower_step(scan_of([1, 1, 1, 1, 9, 1, 1, 1, 1]), p, V).cmd.speed
    turning = gap_follower_step(scan_of([1, 1, 1, 1, 1, 1, 9, 9, 9]), p, V).cmd.speed
    assert ahead == pytest.approx(p.cruise_speed)
    assert turning < ahead


# -- pure pursuit ---------------------------------------------------------------

def circle_fit_curvature(x, y):
    """Signed curvature of the circle through the origin, tangent to +x, through (x, y)."""
    if y == 0:
        return 0.0
    r = brentq(lambda r: x * x + (y - r) ** 2 - r * r, -1e9 if y < 0 else 1e-12,
               -1e-12 if y < 0 else 1e9, xtol=1e-15, rtol=1e-15)
    return 1.0 / r


def test_curvature_dead_ahead_is_zero():
    assert pursuit_curvature(2.0, 0.0) == 0.0


def test_curvature_at_thirty_degrees():
    x, y = 2 * math.cos(math.radians(30)), 2 * math.sin(math.radians(30))
    k = pursuit_curvature(x, y)
    assert k == pytest.approx(0.5, abs=1e-12)
    assert k == pytest.approx(circle_fit_curvature(x, y), rel=1e-9)
    assert math.atan(0.33 * k) == pytest.approx(0.1635266, abs=1e-7)


def test_curvature_purely_lateral():
    for y in (0.5, 1.0, 3.0):
        assert pursuit_curvature(0.0, y) == pytest.approx(2.0 / y)
        assert pursuit_curvature(0.0, y) == pytest.approx(circle_fit_curvature(0.0, y), rel=1e-9)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_curvature_identity(x, y):
    if math.hypot(x, y) < 1e-6:
        return
    alpha, ld = math.atan2(y, x), math.hypot(x, y)
    # sin(pi) is 1.2e-16 in floating point, so the oracle itself carries ~eps/ld noise
    floor = 1e-12 + 4 * np.finfo(float).eps / ld
    assert pursuit_curvature(x, y) == pytest.approx(2 * math.sin(alpha) / ld, rel=1e-12, abs=floor)


def test_pure_pursuit_on_path_goes_straight_at_reference_speed():
    path = straight_path(speed=2.5)
    out = pure_pursuit_step(VehicleState(Pose2D(3.0, 0.0, 0.0), 2.0), path, 1.2, V)
    assert out.cmd.steering_angle == pytest.approx(0.0, abs=1e-12)
    assert out.cmd.speed == pytest.approx(2.5)


def test_pure_pursuit_target_at_thirty_degrees():
    # vehicle yawed -30 deg on the x-axis path: the target 2 m ahead sits at +30 deg bearing
    path = straight_path()
    state = VehicleState(Pose2D(5.0, 0.0, -math.radians(30)))
    out = pure_pursuit_step(state, path, 2.0, V)
    assert out.raw_steering == pytest.approx(math.atan(0.33 * 0.5), abs=1e-12)


def test_pure_pursuit_open_path_exhausted():
    path = straight_path(length=5.0)
    with pytest.raises(PathExhausted):
        pure_pursuit_step(VehicleState(Pose2D(6.0, 0.0, 0.0)), path, 1.0, V)
    out = PurePursuit(V, path, 1.0)(VehicleState(Pose2D(6.0, 0.0, 0.0)), None, 0.0)
    assert out.cmd.speed == 0.0


def test_pure_pursuit_wraps_on_closed_path():
    path = circle_path()
    end = path.points[-1]
    out = pure_pursuit_step(VehicleState(Pose2D(end[0], end[1], math.pi / 2)), path, 1.0, V)
    assert out.cmd.steering_angle > 0  # counterclockwise circle: steer left


def test_memo_reset_does_not_change_output():
    path = circle_path()
    pp = PurePursuit(V, path, 1.2)
    rng = np.random.default_rng(1)
    for a in np.linspace(0, 6, 30):
        st_ = VehicleState(Pose2D(5.2 * math.cos(a), 5.2 * math.sin(a), a + math.pi / 2 + rng.normal(0, 0.1)))
        warm = pp(st_, None, 0.0).cmd
        pp.reset()
        cold = pp(st_, None, 0.0).cmd
        assert warm == cold


# -- Riccati --------------------------------------------------------------------

def test_scalar_dare_golden_ratio():
    P = dare_solve(1, 1, 1, 1)
    assert P[0, 0] == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-9)
    # 200 plain fixed-point iterations as an independent check
    p = 1.0
    for _ in range(200):
        p = 1 + p - p * p / (1 + p)
    assert P[0, 0] == pytest.approx(p, abs=1e-12)


def test_dare_with_dead_state_returns_q():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.array_equal(dare_solve(np.zeros((2, 2)), np.ones((2, 1)), Q, [[1.0]]), Q)


def test_dare_without_input_is_geometric_series():
    P = dare_solve(0.5, 0.0, 1.0, 1.0)
    assert P[0, 0] == pytest.approx(4 / 3, abs=1e-12)
    assert P[0, 0] == pytest.approx(sum(0.25 ** k for k in range(100)), abs=1e-12)


def test_dare_unstabilizable_raises():
    with pytest.raises(NoConvergence):
        dare_solve(2.0, 0.0, 1.0, 1.0, max_iter=2000)


def test_dare_matches_scipy_on_lateral_models():
    for v in (1.0, 3.0, 6.0):
        A, B = lateral_model(v, 0.02, 0.33)
        Q, R = np.diag([1.0, 0.5]), np.array([[2.0]])
        P = dare_solve(A, B, Q, R)
        assert np.allclose(P, scipy.linalg.solve_discrete_are(A, B, Q, R), rtol=1e-8, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dare_residual_by_substitution(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(0, 0.6, (2, 2))
    B = rng.normal(0, 1, (2, 1))
    M = rng.normal(0, 1, (2, 2))
    Q = M @ M.T + 0.1 * np.eye(2)
    R = np.array([[rng.uniform(0.1, 3)]])
    tol = 1e-10
    try:
        P = dare_solve(A, B, Q, R, tol=tol)
    except NoConvergence:
        return
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A) + Q
    assert np.max(np.abs(rhs - P)) <= tol
    assert np.allclose(P, P.T)
    assert np.all(np.linalg.eigvalsh(P) > 0)


def test_lqr_scalar_gain():
    g = lqr_gain(1, 1, 1, 1)
    assert g.K[0, 0] == pytest.approx(0.618034, abs=1e-6)


def test_finite_horizon_converges_to_dare_gain():
    K200 = finite_horizon_gain(1, 1, 1, 1, 200)
    assert K200[0, 0] == pytest.approx(lqr_gain(1, 1, 1, 1).K[0, 0], abs=1e-6)


def test_one_step_horizon_formula():
    A, B = lateral_model(3.0, 0.02, 0.33)
    Q, R = np.eye(2), np.eye(1)
    expected = np.linalg.inv(R + B.T @ Q @ B) @ B.T @ Q @ A
    assert np.allclose(finite_horizon_gain(A, B, Q, R, 1), expected, atol=1e-15)


# -- LQR / MPC steps --------------------------------------------------------------

def test_lqr_zero_error_zero_steering():
    path = straight_path()
    A, B = lateral_model(2.0, 0.02, 0.33)
    g = lqr_gain(A, B, np.diag([1, 0.5]), [[2.0]])
    out = lqr_step(VehicleState(Pose2D(3.0, 0.0, 0.0)), path, g, V)
    assert out.raw_steering == 0.0


def test_lqr_left_of_path_steers_right():
    path = straight_path()
    A, B = lateral_model(2.0, 0.02, 0.33)
    g = lqr_gain(A, B, np.diag([1, 0.5]), [[2.0]])
    assert np.all(g.K > 0)
    out = lqr_step(VehicleState(Pose2D(3.0, 0.3, 0.0)), path, g, V)
    assert out.cmd.steering_angle < 0


@pytest.mark.parametrize("kind", ["lqr", "mpc"])
def test_closed_loop_lateral_convergence(kind):
    dt = 0.01
    path = straight_path(length=30.0, speed=2.0)
    ctrl = make_controller(kind, {}, V, path, dt)
    state = VehicleState(Pose2D(0.5, 0.5, 0.0), 2.0)
    worst_late = 0.0
    for k in range(300):
        out = ctrl(state, None, k * dt)
        state = step(state, out.cmd, V, dt)
        if k * dt >= 2.5:
            worst_late = max(worst_late, abs(state.pose.y))
    assert abs(state.pose.y) < 0.05
    assert worst_late < 0.05


def test_mpc_zero_error_zero_input():
    out = mpc_step(VehicleState(Pose2D(3.0, 0.0, 0.0)), straight_path(), 10,
                   np.eye(2), np.eye(1), V, 0.02)
    assert out.raw_steering == 0.0


@given(st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=50, deadline=None)
def test_mpc_long_horizon_equals_lqr(e_lat, e_head):
    if math.hypot(e_lat, e_head) > 1:
        return
    dt, v = 0.02, 5.0
    path = straight_path(speed=v)
    Q, R = np.diag([1.0, 0.5]), np.array([[2.0]])
    A, B = lateral_model(v, dt, V.wheelbase)
    state = VehicleState(Pose2D(10.0, e_lat, e_head))
    a = lqr_step(state, path, lqr_gain(A, B, Q, R), V).raw_steering
    b = mpc_step(state, path, 200, Q, R, V, dt).raw_steering
    assert a == pytest.approx(b, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(CONTROLLERS), st.floats(-8, 8), st.floats(-8, 8),
       st.floats(-math.pi, math.pi), st.floats(0, 7),
       st.lists(st.floats(0.0, 12.0), min_size=9, max_size=9))
def test_outputs_respect_actuator_limits(name, x, y, yaw, v, ranges):
    path = circle_path()
    ctrl = make_controller(name, {}, V, path, 0.02)
    out = ctrl(VehicleState(Pose2D(x, y, yaw), v), scan_of(ranges), 0.0)
    assert -V.max_steer <= out.cmd.steering_angle <= V.max_steer
    assert 0.0 <= out.cmd.speed <= V.max_speed
    assert out.compute_time >= 0


def test_make_controller_lists_names():
    with pytest.raises(ValueError, match="gap_follower.*lqr.*mpc.*pure_pursuit"):
        make_controller("unknown", {}, V, None, 0.02)
    with pytest.raises(ValueError):
        make_controller("pure_pursuit", {}, V, None, 0.02)
    assert isinstance(make_controller("mpc", {"horizon": 5}, V, circle_path(), 0.02), MpcController)
    assert isinstance(make_controller("lqr", {}, V, circle_path(), 0.02), LqrController)


def test_riccati_gain_matches_direct_formula():
    A, B = lateral_model(4.0, 0.02, 0.33)
    P = np.diag([3.0, 2.0])
    R = np.array([[0.5]])
    assert np.allclose(riccati_gain(A, B, R, P), np.linalg.inv(R + B.T @ P @ B) @ B.T @ P @ A)


def test_drive_command_shape():
    out = gap_follower_step(scan_of([5.0] * 9), GapFollowerParams(), V, t=1.5)
    assert isinstance(out.cmd, DriveCommand) and out.cmd.t == 1.5
