"""Closed-loop race simulation wired through the topic bus.

One simulation step at time ``t``:

1. the vehicle publishes ``odom``; the monitor and path trackers react,
2. on control ticks the LiDAR publishes ``scan``, the scan filter publishes
   ``scan_filtered`` and the gap follower reacts,
3. the collision check runs on the current pose,
4. the vehicle integrates the latest ``drive`` command over ``dt``.

Everything runs on the calling thread, so a given configuration always
produces the same state sequence.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .controllers import Controller, make_controller
from .messages import (Bus, DriveCommand, Layer, OdomSample, Scan, StageDescriptor,
                       StampedPose, pipeline_errors, topic, validate_pipeline)
from .metrics import MetricBundle
from .monitor import (LapCompleted, LapRecord, MonitorConfig, RaceFinished, RaceMonitor,
                      RaceSummary, ResourceSample, ResourceStats, sample_resources)
from .paths import ReferencePath
from .sim import (GridMap, PoseOutOfBounds, VehicleState, check_collision, load_map_file,
                  raycast_scan, step)
from .trajio import Trajectory, load, parse_csv

log = logging.getLogger(__name__)

EGO = "/ego_racecar"


def filter_scan(scan: Scan, window: int = 3) -> Scan:
    """Sliding-window minimum over beams; thin spurious gaps close up.

    Beams without a return stay at ``inf`` unless a neighbour has one.
    """
    if window <= 1:
        return scan
    r = np.asarray(scan.ranges)
    half = window // 2
    padded = np.pad(r, half, mode="edge")
    view = np.lib.stride_tricks.sliding_window_view(padded, window)
    return Scan(scan.t, scan.angle_min, scan.angle_max, scan.angle_increment,
                scan.range_min, scan.range_max, view.min(axis=1))


@dataclass
class RaceResult:
    status: str  # finished | collision | stalled | timeout
    laps: list[LapRecord]
    summary: RaceSummary | None
    metrics: MetricBundle | None
    resources: ResourceStats | None
    trajectory: Trajectory
    events: list = field(default_factory=list)
    sim_time: float = 0.0
    steps: int = 0

    @property
    def completed(self) -> bool:
        return self.status == "finished"


def load_reference_path(config: ExperimentConfig) -> ReferencePath | None:
    if config.path_file is None:
        return None
    with open(config.path_file) as fh:
        _, path = parse_csv(fh.read(), closed=config.path_closed)
    if path is None:
        raise ValueError(f"{config.path_file}: reference path needs a speed column")
    return path


def load_monitor_reference(monitor: MonitorConfig) -> Trajectory | None:
    if monitor.reference is None:
        return None
    return load(monitor.reference.path, monitor.reference.format)


def pipeline_stages(controller: Controller, has_reference: bool) -> list[StageDescriptor]:
    scan, odom, drive = (f"{EGO}/{b}" for b in ("scan", "odom", "drive"))
    stages = [
        StageDescriptor("lidar", Layer.SENSING, frozenset(), frozenset({scan})),
        StageDescriptor("map_server", Layer.LOCALIZATION_MAPPING, frozenset(), frozenset({"/map"})),
        StageDescriptor("race_monitor", Layer.BEHAVIOR, frozenset({odom}),
                        frozenset(f"/race_monitor/{b}" for b in
                                  ("lap_count", "lap_time", "race_running", "race_status",
                                   "total_distance", "current_trajectory",
                                   "trajectory_metrics"))),
    ]
    if controller.needs_scan:
        stages.append(StageDescriptor("scan_filter", Layer.PREPROCESSING, frozenset({scan}),
                                      frozenset({f"{EGO}/scan_filtered"})))
        stages.append(StageDescriptor(controller.name, Layer.CONTROL,
                                      frozenset({f"{EGO}/scan_filtered"}), frozenset({drive})))
    else:
        stages.append(StageDescriptor("reference_path", Layer.PLANNING, frozenset(),
                                      frozenset({f"{EGO}/plan"})))
        stages.append(StageDescriptor(controller.name, Layer.CONTROL,
                                      frozenset({odom, f"{EGO}/plan"}), frozenset({drive})))
    # the vehicle closes the loop: odometry flows from actuation back up (flagged)
    stages.append(StageDescriptor("vehicle", Layer.ACTUATION, frozenset({drive}),
                                  frozenset({odom})))
    return stages


class Race:
    """Owns the bus, the world, one controller and the monitor for one run."""

    def __init__(self, config: ExperimentConfig, grid: GridMap | None = None,
                 path: ReferencePath | None = None, reference: Trajectory | None = None,
                 bus: Bus | None = None):
        self.config = config
        self.grid = grid if grid is not None else load_map_file(config.map_path)
        self.path = path if path is not None else load_reference_path(config)
        if reference is None:
            reference = load_monitor_reference(config.monitor)
        self.bus = bus or Bus()
        self.controller = make_controller(config.controller, config.controller_params,
                                          config.vehicle, self.path, config.control_period)
        self.monitor = RaceMonitor(config.monitor, self.bus, reference)
        self.state = VehicleState(config.start)
        self.cmd = DriveCommand(0.0, 0.0, 0.0)
        self.resources: list[ResourceSample] = []
        self.violations = validate_pipeline(pipeline_stages(self.controller, reference is not None))
        errors = pipeline_errors(self.violations)
        if errors:
            raise ValueError(f"pipeline wiring errors: {errors}")
        for v in self.violations:
            log.debug("pipeline: %s", v)

        self._t_scan = topic("scan", EGO)
        self._t_filtered = topic("scan_filtered", EGO)
        self._t_odom = topic("odom", EGO)
        self._t_drive = topic("drive", EGO)
        self._sensor_wall = 0.0
        self._control_due = False
        self.events: list = []
        self._odom_log: list[tuple[float, float, float, float]] = []
        self._rng = np.random.default_rng(config.sim.seed)

        self.bus.subscribe(self._t_drive, self._on_drive, DriveCommand)
        self.bus.subscribe(self._t_odom, self._on_odom_monitor, OdomSample)
        if self.controller.needs_scan:
            self.bus.subscribe(self._t_scan, self._on_scan_filter, Scan)
            self.bus.subscribe(self._t_filtered, self._on_scan_control, Scan)
        else:
            self.bus.subscribe(self._t_odom, self._on_odom_control, OdomSample)
        self.bus.publish("/map", self.grid)
        if self.path is not None:
            self.bus.publish(topic("plan", EGO), self.path)

    # -- nodes ----------------------------------------------------------------

    def _on_drive(self, cmd: DriveCommand):
        self.cmd = cmd

    def _on_odom_monitor(self, odom: OdomSample):
        self.events.extend(self.monitor.update(StampedPose(odom.t, odom.pose), odom.v_linear))

    def _run_controller(self, state: VehicleState, scan: Scan | None, t: float):
        out, sample = sample_resources(self.controller, state, scan, t, t=t,
                                       sensor_wall_time=self._sensor_wall)
        self.bus.publish(self._t_drive, out.cmd)
        sample = ResourceSample(sample.t, time.perf_counter() - self._sensor_wall,
                                out.compute_time, sample.process_cpu_fraction)
        self.resources.append(sample)

    def _on_odom_control(self, odom: OdomSample):
        if self._control_due:
            self._run_controller(VehicleState(odom.pose, odom.v_linear), None, odom.t)

    def _on_scan_filter(self, scan: Scan):
        self.bus.publish(self._t_filtered, filter_scan(scan))

    def _on_scan_control(self, scan: Scan):
        self._run_controller(self.state, scan, scan.t)

    # -- loop -----------------------------------------------------------------

    def run(self) -> RaceResult:
        cfg = self.config
        dt = cfg.sim.dt
        control_every = max(int(round(cfg.control_period / dt)), 1)
        max_steps = int(math.ceil(cfg.max_time / dt))
        stall_steps = int(math.ceil(cfg.stall_time / dt))
        still = 0
        status = "timeout"
        k = 0
        for k in range(max_steps + 1):
            t = round(k * dt, 9)
            self._control_due = k % control_every == 0
            pose = self.state.pose
            yaw_rate = self.state.v / cfg.vehicle.wheelbase * math.tan(self.state.steer)
            self._odom_log.append((t, pose.x, pose.y, pose.yaw))
            self._sensor_wall = time.perf_counter()
            self.bus.publish(self._t_odom, OdomSample(t, pose, self.state.v, yaw_rate))
            if self.monitor.finished:
                status = "finished"
                break
            if self._control_due and self.bus.subscriber_count(self._t_scan):
                self._sensor_wall = time.perf_counter()
                self.bus.publish(self._t_scan, raycast_scan(self.grid, pose, cfg.sim, t, self._rng))
            try:
                crashed = check_collision(self.grid, pose, cfg.vehicle.footprint_radius)
            except PoseOutOfBounds:
                crashed = True
            if crashed:
                status = "collision"
                break
            still = still + 1 if self.state.v == 0.0 and self.cmd.speed <= 0.0 else 0
            if still >= stall_steps:
                status = "stalled"
                break
            self.state = step(self.state, self.cmd, cfg.vehicle, dt)
        sim_time = round(k * dt, 9)
        if not self.monitor.finished:
            self.monitor.stop()
        return self._result(status, sim_time, k)

    def _result(self, status: str, sim_time: float, steps: int) -> RaceResult:
        log_arr = np.array(self._odom_log)
        traj = Trajectory.empty()
        race_window = [e.t for e in self.events if not isinstance(e, LapCompleted)]
        summary, metrics = None, None
        if self.monitor.laps:
            t0 = race_window[0]
            t1 = next((e.t for e in self.events if isinstance(e, RaceFinished)), sim_time)
            keep = (log_arr[:, 0] >= t0) & (log_arr[:, 0] <= t1)
            sel = log_arr[keep]
            traj = Trajectory.from_planar(sel[:, 1], sel[:, 2], sel[:, 3], sel[:, 0])
            summary, metrics = self.monitor.finalize(traj, self.config.controller,
                                                     self.config.experiment_id)
        return RaceResult(status, list(self.monitor.laps), summary, metrics,
                          ResourceStats.from_samples(self.resources), traj, self.events,
                          sim_time, steps)


def run_race(config: ExperimentConfig, **kwargs) -> RaceResult:
    return Race(config, **kwargs).run()
