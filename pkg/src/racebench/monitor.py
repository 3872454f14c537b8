"""Race supervision: lap detection, lap statistics, resource sampling, telemetry."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .messages import Bus, PosePath, Pose2D, StampedPose, topic
from .metrics import MetricBundle, evaluate, project_onto_reference
from .trajio import FormatKind, Trajectory

MONITOR_NAMESPACE = "/race_monitor"

# topic base -> value kind
TELEMETRY_TOPICS = {
    "lap_count": int,
    "lap_time": float,
    "race_running": bool,
    "race_status": str,
    "total_distance": float,
    "current_trajectory": PosePath,
    "trajectory_metrics": str,
}


class EmptyLaps(ValueError):
    """No completed laps to summarize."""


class NonMonotonicTime(ValueError):
    pass


@dataclass(frozen=True)
class FinishZone:
    """Directed start/finish segment; valid crossings move along ``direction``."""

    a: tuple[float, float]
    b: tuple[float, float]
    direction: tuple[float, float] | None = None

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        b = tuple(float(v) for v in self.b)
        ex, ey = b[0] - a[0], b[1] - a[1]
        length = math.hypot(ex, ey)
        if length == 0:
            raise ValueError("finish zone endpoints must differ")
        if self.direction is None:
            d = (ey / length, -ex / length)
        else:
            dx, dy = (float(v) for v in self.direction)
            norm = math.hypot(dx, dy)
            if norm == 0:
                raise ValueError("finish zone direction must be non-zero")
            d = (dx / norm, dy / norm)
            if abs(d[0] * ex + d[1] * ey) / length > 1e-9:
                raise ValueError("finish zone direction must be perpendicular to the line")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "direction", d)

    @classmethod
    def parse(cls, text: str) -> "FinishZone":
        """From ``"ax,ay,bx,by[,dx,dy]"``."""
        values = [float(v) for v in text.split(",")]
        if len(values) not in (4, 6):
            raise ValueError("zone needs ax,ay,bx,by with optional dx,dy")
        direction = tuple(values[4:]) if len(values) == 6 else None
        return cls(tuple(values[:2]), tuple(values[2:4]), direction)

    def crossing(self, p: tuple[float, float], q: tuple[float, float]) -> float | None:
        """Fraction along p->q where the motion crosses the line in the valid
        direction, or None."""
        (ax, ay), (bx, by) = self.a, self.b
        rx, ry = q[0] - p[0], q[1] - p[1]
        if rx * self.direction[0] + ry * self.direction[1] <= 0:
            return None
        sx, sy = bx - ax, by - ay
        denom = rx * sy - ry * sx
        if denom == 0:
            return None
        qpx, qpy = ax - p[0], ay - p[1]
        u = (qpx * sy - qpy * sx) / denom
        w = (qpx * ry - qpy * rx) / denom
        if 0.0 <= u <= 1.0 and 0.0 <= w <= 1.0:
            return u
        return None


@dataclass(frozen=True)
class LapRecord:
    index: int
    time: float
    distance: float
    avg_speed: float
    max_speed: float


@dataclass(frozen=True)
class RaceStarted:
    t: float


@dataclass(frozen=True)
class LapCompleted:
    lap: LapRecord
    t: float


@dataclass(frozen=True)
class RaceFinished:
    t: float
    laps: int


@dataclass
class RaceState:
    lap_count: int = 0
    race_running: bool = False
    status: str = "waiting"
    total_distance: float = 0.0
    current_lap_elapsed: float = 0.0
    last_lap_time: float = 0.0


@dataclass(frozen=True)
class RaceSummary:
    total_laps: int
    best_lap: float
    average_lap: float
    worst_lap: float
    lap_std: float
    coefficient_of_variation: float
    consistency_score: float
    avg_speed: float
    max_speed: float
    controller: str = ""
    experiment_id: str = ""


def lap_statistics(laps, controller: str = "", experiment_id: str = "") -> RaceSummary:
    """Aggregate lap times; consistency is ``1 - min(1, std / mean)``."""
    laps = list(laps)
    if not laps:
        raise EmptyLaps("no completed laps")
    times = np.array([lap.time for lap in laps], dtype=float)
    mean = float(np.mean(times))
    std = float(np.std(times))
    total_time = float(np.sum(times))
    distance = math.fsum(lap.distance for lap in laps)
    return RaceSummary(
        total_laps=len(laps),
        best_lap=float(times.min()),
        average_lap=mean,
        worst_lap=float(times.max()),
        lap_std=std,
        coefficient_of_variation=std / mean,
        consistency_score=1.0 - min(1.0, std / mean),
        avg_speed=distance / total_time,
        max_speed=max(lap.max_speed for lap in laps),
        controller=controller,
        experiment_id=experiment_id,
    )


@dataclass(frozen=True)
class ResourceSample:
    t: float
    control_latency: float
    step_compute: float
    process_cpu_fraction: float | None = None


def sample_resources(step: Callable, *args, t: float = 0.0,
                     sensor_wall_time: float | None = None, **kwargs):
    """Call ``step`` and measure it.

    Returns ``(result, ResourceSample)``. Compute time is the wall-clock span
    of the call; latency runs from ``sensor_wall_time`` (the
    ``time.perf_counter()`` reading when the triggering sensor message was
    emitted, default: call start) to the end of the call.
    """
    cpu0 = time.process_time()
    start = time.perf_counter()
    result = step(*args, **kwargs)
    end = time.perf_counter()
    cpu = time.process_time() - cpu0
    wall = end - start
    fraction = min(max(cpu / wall, 0.0), 1.0) if wall > 0 else None
    origin = start if sensor_wall_time is None else min(sensor_wall_time, start)
    return result, ResourceSample(t, end - origin, wall, fraction)


@dataclass
class ResourceStats:
    mean_latency: float
    max_latency: float
    mean_compute: float
    max_compute: float
    mean_cpu_fraction: float | None
    samples: int

    @classmethod
    def from_samples(cls, samples) -> "ResourceStats | None":
        samples = list(samples)
        if not samples:
            return None
        lat = np.array([s.control_latency for s in samples])
        comp = np.array([s.step_compute for s in samples])
        cpu = [s.process_cpu_fraction for s in samples if s.process_cpu_fraction is not None]
        return cls(float(lat.mean()), float(lat.max()), float(comp.mean()), float(comp.max()),
                   float(np.mean(cpu)) if cpu else None, len(samples))


@dataclass
class ReferenceConfig:
    path: str
    format: FormatKind = FormatKind.CSV
    closed: bool = True


@dataclass
class MonitorConfig:
    finish_zone: FinishZone
    min_lap_time: float = 3.0
    target_laps: int | None = None
    reference: ReferenceConfig | None = None
    modules: dict = field(default_factory=lambda: {
        "lap_timing": True, "trajectory_evaluation": True, "resource_monitoring": True})
    flying_start: bool = False
    align: str = "rigid"
    relation: str = "translation"
    delta: int = 1
    max_t_diff: float = 0.01

    def __post_init__(self):
        if not self.min_lap_time > 0:
            raise ValueError("min_lap_time must be positive")
        if self.target_laps is not None and self.target_laps < 1:
            raise ValueError("target_laps must be at least 1")


class RaceMonitor:
    """Lap-timing state machine fed with stamped poses.

    The first valid crossing starts the race (standing start) unless
    ``flying_start`` is set, in which case timing starts with the first
    sample. Crossing instants are interpolated linearly between samples.
    After every update the telemetry topics under ``/race_monitor`` carry the
    current state.
    """

    def __init__(self, config: MonitorConfig, bus: Bus | None = None,
                 reference: Trajectory | None = None, namespace: str = MONITOR_NAMESPACE):
        self.config = config
        self.bus = bus
        self.reference = reference
        self.state = RaceState()
        self.laps: list[LapRecord] = []
        self.namespace = namespace
        self._topics = {base: topic(base, namespace) for base in TELEMETRY_TOPICS}
        self._prev: StampedPose | None = None
        self._lap_start_t: float | None = None
        self._lap_start_dist = 0.0
        self._lap_max_speed = 0.0
        self._lap_path: list[StampedPose] = []
        self._metrics_json = "{}"
        self.stopped = False

    @property
    def finished(self) -> bool:
        return self.state.status == "finished"

    def _start_race(self, t: float, distance: float):
        self.state.race_running = True
        self.state.status = "racing"
        self._lap_start_t = t
        self._lap_start_dist = distance
        self._lap_max_speed = 0.0

    def update(self, sample: StampedPose, v: float | None = None) -> list:
        events: list = []
        prev = self._prev
        if prev is not None and not sample.t > prev.t:
            raise NonMonotonicTime(f"timestamp {sample.t} does not follow {prev.t}")
        p = sample.pose
        if prev is None:
            if self.config.flying_start and not self.finished:
                self._start_race(sample.t, 0.0)
                events.append(RaceStarted(sample.t))
        else:
            q = prev.pose
            seg = math.hypot(p.x - q.x, p.y - q.y)
            dt = sample.t - prev.t
            speed = v if v is not None else seg / dt
            dist_before = self.state.total_distance
            self.state.total_distance = dist_before + seg
            if self.state.race_running:
                self._lap_max_speed = max(self._lap_max_speed, abs(speed))
            if not self.finished and self.config.modules.get("lap_timing", True):
                u = self.config.finish_zone.crossing((q.x, q.y), (p.x, p.y))
                if u is not None:
                    t_cross = prev.t + u * dt
                    d_cross = dist_before + u * seg
                    events.extend(self._on_crossing(t_cross, d_cross))
        if self.state.race_running:
            self.state.current_lap_elapsed = sample.t - self._lap_start_t
            self._lap_path.append(sample)
        self._prev = sample
        self._publish()
        return events

    def _on_crossing(self, t_cross: float, d_cross: float) -> list:
        if not self.state.race_running:
            self._start_race(t_cross, d_cross)
            return [RaceStarted(t_cross)]
        elapsed = t_cross - self._lap_start_t
        if elapsed < self.config.min_lap_time:
            return []
        distance = d_cross - self._lap_start_dist
        lap = LapRecord(len(self.laps) + 1, float(elapsed), float(distance),
                        float(distance / elapsed), float(self._lap_max_speed))
        self.laps.append(lap)
        self.state.lap_count = len(self.laps)
        self.state.last_lap_time = elapsed
        events: list = [LapCompleted(lap, t_cross)]
        self._update_lap_metrics()
        self._lap_start_t = t_cross
        self._lap_start_dist = d_cross
        self._lap_max_speed = 0.0
        self._lap_path = []
        target = self.config.target_laps
        if target is not None and self.state.lap_count >= target:
            self.state.race_running = False
            self.state.status = "finished"
            events.append(RaceFinished(t_cross, self.state.lap_count))
        return events

    def _update_lap_metrics(self):
        if self.reference is None or len(self._lap_path) < 3:
            return
        if not self.config.modules.get("trajectory_evaluation", True):
            return
        est = _trajectory_from_samples(self._lap_path)
        try:
            bundle = evaluate_against(self.reference, est, self.config)
        except ValueError:
            return
        payload = json.loads(bundle.to_json())
        payload["lap"] = self.state.lap_count
        self._metrics_json = json.dumps(payload, sort_keys=True)

    def _publish(self):
        if self.bus is None:
            return
        s = self.state
        values = {
            "lap_count": int(s.lap_count),
            "lap_time": float(s.last_lap_time),
            "race_running": bool(s.race_running),
            "race_status": s.status,
            "total_distance": float(s.total_distance),
            "current_trajectory": PosePath(tuple(self._lap_path)),
            "trajectory_metrics": self._metrics_json,
        }
        for base, value in values.items():
            self.bus.publish(self._topics[base], value)

    def stop(self):
        """End the race early (e.g. after a crash); finalize is allowed afterwards."""
        self.stopped = True
        if self.state.race_running:
            self.state.race_running = False
        if self.state.status != "finished":
            self.state.status = "finished"
        self._publish()

    def finalize(self, estimated: Trajectory | None = None, controller: str = "",
                 experiment_id: str = "") -> tuple[RaceSummary, MetricBundle | None]:
        if not (self.finished or self.stopped):
            raise RuntimeError("finalize needs a finished or stopped race")
        summary = lap_statistics(self.laps, controller, experiment_id)
        bundle = None
        if (self.reference is not None and estimated is not None and len(estimated) > 2
                and self.config.modules.get("trajectory_evaluation", True)):
            bundle = evaluate_against(self.reference, estimated, self.config)
        return summary, bundle


def _trajectory_from_samples(samples) -> Trajectory:
    t = [s.t for s in samples]
    x = [s.pose.x for s in samples]
    y = [s.pose.y for s in samples]
    yaw = [s.pose.yaw for s in samples]
    return Trajectory.from_planar(x, y, yaw, t)


def evaluate_against(reference: Trajectory, est: Trajectory, config: MonitorConfig) -> MetricBundle:
    """APE/RPE of ``est``; an untimed reference line is first projected onto
    the estimate so that poses pair up by time."""
    if not reference.stamped:
        closed = config.reference.closed if config.reference else True
        reference = project_onto_reference(est, reference, closed)
    return evaluate(reference, est, config.align, config.relation, config.delta,
                    config.max_t_diff)


def replay(samples, config: MonitorConfig, bus: Bus | None = None) -> tuple[RaceMonitor, list]:
    """Feed a recorded pose stream through a fresh monitor; returns it and all events."""
    monitor = RaceMonitor(config, bus)
    events = []
    for sample, v in samples:
        events.extend(monitor.update(sample, v))
    if not monitor.finished:
        monitor.stop()
    return monitor, events


def stamped_poses(traj: Trajectory):
    """``(StampedPose, None)`` pairs from a stamped trajectory, for :func:`replay`."""
    for t, (x, y), yaw in zip(traj.t, traj.xy, traj.yaw):
        yield StampedPose(float(t), Pose2D(float(x), float(y), float(yaw))), None
