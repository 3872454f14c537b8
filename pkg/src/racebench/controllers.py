"""Control-layer strategies behind one interface.

Four trackers are provided: a reactive gap follower working on LiDAR scans,
and three path trackers (pure pursuit, LQR, receding-horizon Riccati MPC)
following a :class:`~racebench.paths.ReferencePath`. The ``*_step`` functions
are pure; the classes add the small amount of state each controller keeps and
turn the stop signals (``NoGap``, ``PathExhausted``) into stop commands.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .messages import DriveCommand, Scan, wrap_angle
from .paths import PathExhausted, ReferencePath
from .sim import VehicleParams, VehicleState


class NoGap(RuntimeError):
    """Every beam is at or below the gap threshold."""


class NoConvergence(RuntimeError):
    """Riccati iteration did not reach the requested tolerance."""


@dataclass(frozen=True)
class ControlOutput:
    cmd: DriveCommand
    compute_time: float
    raw_steering: float = 0.0
    path_index: int | None = None


def _clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def _command(t: float, speed: float, steering: float, vehicle: VehicleParams) -> DriveCommand:
    return DriveCommand(
        t,
        _clamp(speed, 0.0, vehicle.max_speed),
        _clamp(steering, -vehicle.max_steer, vehicle.max_steer),
    )


# -- gap follower -------------------------------------------------------------

@dataclass(frozen=True)
class GapFollowerParams:
    max_clip: float = 6.0
    bubble_radius: float = 0.35
    gap_threshold: float = 1.5
    cruise_speed: float = 3.5
    slowdown: float = 0.6
    steer_gain: float = 1.0


def find_widest_gap(ranges: np.ndarray, threshold: float) -> tuple[int, int] | None:
    """First longest run of ``ranges > threshold`` as inclusive ``(start, end)``."""
    free = np.concatenate(([0], (ranges > threshold).view(np.int8), [0]))
    edges = np.flatnonzero(np.diff(free))
    if edges.size == 0:
        return None
    starts, stops = edges[::2], edges[1::2]
    k = int(np.argmax(stops - starts))
    return int(starts[k]), int(stops[k]) - 1


def gap_follower_step(scan: Scan, params: GapFollowerParams, vehicle: VehicleParams,
                      t: float | None = None) -> ControlOutput:
    """Steer toward the middle of the widest free gap.

    Ranges are clipped to ``max_clip``, beams within ``bubble_radius`` of the
    closest return are zeroed, and the longest run of beams above
    ``gap_threshold`` wins. Speed falls linearly with steering magnitude.
    Raises ``NoGap`` when nothing clears the threshold.
    """
    start = time.perf_counter()
    t = scan.t if t is None else t
    ranges = np.minimum(scan.ranges, params.max_clip)
    if ranges.size == 0:
        raise ValueError("empty scan")
    closest = int(np.argmin(ranges))
    r = ranges[closest]
    if r > 0:
        # bubble half-angle; compared before dividing so tiny ranges cannot overflow
        if r * math.pi > params.bubble_radius:
            span = int(params.bubble_radius / r / scan.angle_increment)
        else:
            span = ranges.size
        ranges[max(closest - span, 0): closest + span + 1] = 0.0
    else:
        ranges[closest] = 0.0
    gap = find_widest_gap(ranges, params.gap_threshold)
    if gap is None:
        raise NoGap(f"no beam above {params.gap_threshold} m")
    mid = 0.5 * (gap[0] + gap[1])
    raw = params.steer_gain * scan.angle(mid)
    steer = _clamp(raw, -vehicle.max_steer, vehicle.max_steer)
    speed = params.cruise_speed * (1.0 - params.slowdown * abs(steer) / vehicle.max_steer)
    cmd = _command(t, speed, steer, vehicle)
    return ControlOutput(cmd, time.perf_counter() - start, raw)


# -- pure pursuit -------------------------------------------------------------

def pursuit_curvature(x_l: float, y_l: float) -> float:
    """Curvature of the arc from the origin, tangent to +x, through (x_l, y_l)."""
    d2 = x_l * x_l + y_l * y_l
    if d2 == 0.0:
        return 0.0
    return 2.0 * y_l / d2


def _target_ahead(path: ReferencePath, segment: int, fraction: float, distance: float):
    s0 = path.arc_position(segment, fraction)
    if not path.closed:
        if s0 >= path.length:
            raise PathExhausted("vehicle is at the end of the path")
        return path.point_at(min(s0 + distance, path.length))
    return path.point_at(s0 + distance)


def pure_pursuit_step(state: VehicleState, path: ReferencePath, lookahead: float,
                      vehicle: VehicleParams, hint: int | None = None,
                      t: float = 0.0, speed_scale: float = 1.0) -> ControlOutput:
    """Pure pursuit toward the path point ``lookahead`` meters of arc ahead.

    The target is expressed in the vehicle frame as ``(x_l, y_l)``; steering
    is ``atan(wheelbase * 2 y_l / (x_l^2 + y_l^2))`` and speed is the
    reference speed at the target.
    """
    start = time.perf_counter()
    if not lookahead > 0:
        raise ValueError("lookahead must be positive")
    pose = state.pose
    segment, fraction, _ = path.closest(pose.x, pose.y, hint)
    target = _target_ahead(path, segment, fraction, lookahead)
    dx, dy = target.x - pose.x, target.y - pose.y
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    x_l = c * dx + s * dy
    y_l = -s * dx + c * dy
    raw = math.atan(vehicle.wheelbase * pursuit_curvature(x_l, y_l))
    cmd = _command(t, speed_scale * target.speed, raw, vehicle)
    return ControlOutput(cmd, time.perf_counter() - start, raw, segment)


# -- Riccati machinery --------------------------------------------------------

def _as_matrix(m) -> np.ndarray:
    return np.atleast_2d(np.asarray(m, dtype=float))


def dare_solve(A, B, Q, R, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` from ``P = Q`` until
    successive iterates differ by at most ``tol`` (max-abs element).
    """
    A, B, Q, R = (_as_matrix(m) for m in (A, B, Q, R))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise ValueError("inconsistent Riccati dimensions")
    P = Q.copy()
    with np.errstate(over="ignore", invalid="ignore"):  # divergence surfaces as NoConvergence
        for _ in range(max_iter):
            BtP = B.T @ P
            P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
            P_next = 0.5 * (P_next + P_next.T)
            if not np.all(np.isfinite(P_next)):
                break
            if np.max(np.abs(P_next - P)) <= tol:
                return P_next
            P = P_next
    raise NoConvergence(f"Riccati iteration did not converge within {max_iter} steps")


def riccati_gain(A, B, R, P) -> np.ndarray:
    A, B, R, P = (_as_matrix(m) for m in (A, B, R, P))
    BtP = B.T @ P
    return np.linalg.solve(R + BtP @ B, BtP @ A)


@dataclass(frozen=True)
class LqrGain:
    K: np.ndarray
    P: np.ndarray


def lqr_gain(A, B, Q, R, tol: float = 1e-12) -> LqrGain:
    P = dare_solve(A, B, Q, R, tol=tol)
    return LqrGain(riccati_gain(A, B, R, P), P)


def finite_horizon_gain(A, B, Q, R, horizon: int, terminal=None) -> np.ndarray:
    """First-step gain of the ``horizon``-step LQ problem (backward recursion)."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    A, B, Q, R = (_as_matrix(m) for m in (A, B, Q, R))
    P = Q if terminal is None else _as_matrix(terminal)
    for _ in range(horizon - 1):
        BtP = B.T @ P
        P = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
    return riccati_gain(A, B, R, P)


def lateral_model(v: float, dt: float, wheelbase: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete (lateral error, heading error) model at speed ``v``."""
    A = np.array([[1.0, v * dt], [0.0, 1.0]])
    B = np.array([[0.0], [v * dt / wheelbase]])
    return A, B


def tracking_error(state: VehicleState, path: ReferencePath, hint: int | None = None):
    """``(e_lat, e_head, v_ref, segment)``; e_lat > 0 when left of the path."""
    pose = state.pose
    segment, fraction, _ = path.closest(pose.x, pose.y, hint)
    if not path.closed and segment == path.n_segments - 1 and fraction >= 1.0:
        raise PathExhausted("vehicle is past the end of the path")
    x0, y0 = path.points[segment, :2]
    heading = path.headings[segment]
    c, s = math.cos(heading), math.sin(heading)
    e_lat = c * (pose.y - y0) - s * (pose.x - x0)
    e_head = wrap_angle(pose.yaw - heading)
    point = path.point_at(path.arc_position(segment, fraction))
    return e_lat, e_head, point.speed, segment


def lqr_step(state: VehicleState, path: ReferencePath, gain: LqrGain,
             vehicle: VehicleParams, hint: int | None = None, t: float = 0.0,
             speed_scale: float = 1.0) -> ControlOutput:
    """Steering ``-K x`` on the lateral error state, speed from the reference."""
    start = time.perf_counter()
    e_lat, e_head, v_ref, segment = tracking_error(state, path, hint)
    K = gain.K
    raw = -(K[0, 0] * e_lat + K[0, 1] * e_head)
    cmd = _command(t, speed_scale * v_ref, raw, vehicle)
    return ControlOutput(cmd, time.perf_counter() - start, raw, segment)


def mpc_step(state: VehicleState, path: ReferencePath, horizon: int, Q, R,
             vehicle: VehicleParams, dt: float, hint: int | None = None,
             t: float = 0.0, speed_scale: float = 1.0) -> ControlOutput:
    """Receding-horizon LQ tracking: re-solve the finite-horizon problem at the
    current reference speed, apply the first input, saturate."""
    start = time.perf_counter()
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    e_lat, e_head, v_ref, segment = tracking_error(state, path, hint)
    v = speed_scale * v_ref
    A, B = lateral_model(v, dt, vehicle.wheelbase)
    K = finite_horizon_gain(A, B, Q, R, horizon)
    raw = -(K[0, 0] * e_lat + K[0, 1] * e_head)
    cmd = _command(t, v, raw, vehicle)
    return ControlOutput(cmd, time.perf_counter() - start, raw, segment)


# -- controller objects -------------------------------------------------------

def _stop(t: float, start: float, segment: int | None = None) -> ControlOutput:
    return ControlOutput(DriveCommand(t, 0.0, 0.0), time.perf_counter() - start, 0.0, segment)


class Controller:
    name = "controller"
    needs_scan = False

    def __call__(self, state: VehicleState, scan: Scan | None, t: float) -> ControlOutput:
        raise NotImplementedError

    def reset(self):
        pass


class GapFollower(Controller):
    name = "gap_follower"
    needs_scan = True

    def __init__(self, vehicle: VehicleParams, params: GapFollowerParams = GapFollowerParams()):
        self.vehicle = vehicle
        self.params = params

    def __call__(self, state, scan, t):
        start = time.perf_counter()
        try:
            return gap_follower_step(scan, self.params, self.vehicle, t)
        except NoGap:
            return _stop(t, start)


class _PathTracker(Controller):
    def __init__(self, vehicle: VehicleParams, path: ReferencePath, speed_scale: float = 1.0):
        self.vehicle = vehicle
        self.path = path
        self.speed_scale = speed_scale
        self._hint: int | None = None

    def reset(self):
        self._hint = None

    def _track(self, state, t) -> ControlOutput:
        raise NotImplementedError

    def __call__(self, state, scan, t):
        start = time.perf_counter()
        try:
            out = self._track(state, t)
        except PathExhausted:
            return _stop(t, start, self._hint)
        self._hint = out.path_index
        return out


class PurePursuit(_PathTracker):
    name = "pure_pursuit"

    def __init__(self, vehicle, path, lookahead: float = 1.2, speed_scale: float = 1.0):
        super().__init__(vehicle, path, speed_scale)
        self.lookahead = lookahead

    def _track(self, state, t):
        return pure_pursuit_step(state, self.path, self.lookahead, self.vehicle,
                                 self._hint, t, self.speed_scale)


class LqrController(_PathTracker):
    """LQR tracker with gains scheduled on the reference speed.

    Gains are solved lazily on a ``speed_step`` grid of reference speeds and
    cached, so a path with a continuous speed profile needs only a handful of
    Riccati solves.
    """

    name = "lqr"

    def __init__(self, vehicle, path, dt: float, q_lat: float = 1.0, q_head: float = 0.5,
                 r_steer: float = 2.0, speed_step: float = 0.25, speed_scale: float = 1.0):
        super().__init__(vehicle, path, speed_scale)
        self.dt = dt
        self.Q = np.diag([q_lat, q_head])
        self.R = np.array([[r_steer]])
        self.speed_step = speed_step
        self._gains: dict[int, LqrGain] = {}

    def gain_for(self, v: float) -> LqrGain:
        key = max(int(round(v / self.speed_step)), 1)
        gain = self._gains.get(key)
        if gain is None:
            A, B = lateral_model(key * self.speed_step, self.dt, self.vehicle.wheelbase)
            gain = self._gains[key] = lqr_gain(A, B, self.Q, self.R)
        return gain

    def _track(self, state, t):
        pose = state.pose
        segment, fraction, _ = self.path.closest(pose.x, pose.y, self._hint)
        v_ref = self.path.point_at(self.path.arc_position(segment, fraction)).speed
        return lqr_step(state, self.path, self.gain_for(self.speed_scale * v_ref),
                        self.vehicle, segment, t, self.speed_scale)


class MpcController(_PathTracker):
    name = "mpc"

    def __init__(self, vehicle, path, dt: float, horizon: int = 25, q_lat: float = 1.0,
                 q_head: float = 0.5, r_steer: float = 2.0, speed_scale: float = 1.0):
        super().__init__(vehicle, path, speed_scale)
        self.dt = dt
        self.horizon = horizon
        self.Q = np.diag([q_lat, q_head])
        self.R = np.array([[r_steer]])

    def _track(self, state, t):
        return mpc_step(state, self.path, self.horizon, self.Q, self.R, self.vehicle,
                        self.dt, self._hint, t, self.speed_scale)


CONTROLLERS = ("gap_follower", "lqr", "mpc", "pure_pursuit")


def _kwargs(cls, params: Mapping, skip=()) -> dict:
    import inspect
    allowed = set(inspect.signature(cls).parameters) - {"vehicle", "path", "dt", *skip}
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown {cls.name} parameter(s): {', '.join(sorted(unknown))}")
    return dict(params)


def make_controller(name: str, params: Mapping, vehicle: VehicleParams,
                    path: ReferencePath | None, dt: float) -> Controller:
    """Instantiate a controller by configuration name."""
    params = dict(params or {})
    if name == "gap_follower":
        known = {f.name for f in fields(GapFollowerParams)}
        unknown = set(params) - known
        if unknown:
            raise ValueError(f"unknown gap_follower parameter(s): {', '.join(sorted(unknown))}")
        return GapFollower(vehicle, GapFollowerParams(**params))
    if name not in CONTROLLERS:
        raise ValueError(f"unknown controller {name!r}; valid names: {', '.join(CONTROLLERS)}")
    if path is None:
        raise ValueError(f"controller {name} needs a reference path")
    if name == "pure_pursuit":
        return PurePursuit(vehicle, path, **_kwargs(PurePursuit, params))
    if name == "lqr":
        return LqrController(vehicle, path, dt, **_kwargs(LqrController, params))
    return MpcController(vehicle, path, dt, **_kwargs(MpcController, params))
