"""Deterministic planar racing world: occupancy grid, kinematic bicycle, LiDAR.

Grid cells are stored bottom-up (row 0 is the row touching ``origin``), while
map images are stored top-down as usual, so :func:`load_map` flips rows.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Mapping

import numba
import numpy as np
import yaml

from .messages import DriveCommand, Pose2D, Scan

FREE = 0
OCCUPIED = 100
UNKNOWN = -1


class MapError(ValueError):
    pass


class MalformedImage(MapError):
    pass


class DimensionMismatch(MapError):
    pass


class BadThresholds(MapError):
    pass


class PoseOutOfBounds(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridMap:
    width: int
    height: int
    resolution: float
    origin: Pose2D
    cells: np.ndarray  # (height, width) int8, row 0 at origin

    def __post_init__(self):
        if self.resolution <= 0:
            raise MapError("resolution must be positive")
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.size != self.width * self.height:
            raise DimensionMismatch(
                f"{cells.size} cells for a {self.width}x{self.height} grid")
        cells = cells.reshape(self.height, self.width).copy()
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        blocked = np.ascontiguousarray(cells != FREE, dtype=np.uint8)
        blocked.flags.writeable = False
        object.__setattr__(self, "_blocked", blocked)

    @property
    def blocked(self) -> np.ndarray:
        """Cells that stop rays and count as collisions (occupied or unknown)."""
        return self._blocked

    def to_grid(self, x: float, y: float) -> tuple[float, float]:
        """World point to continuous grid coordinates (units of cells)."""
        dx, dy = x - self.origin.x, y - self.origin.y
        c, s = math.cos(self.origin.yaw), math.sin(self.origin.yaw)
        return (c * dx + s * dy) / self.resolution, (-s * dx + c * dy) / self.resolution

    def cell_center(self, col: int, row: int) -> tuple[float, float]:
        gx, gy = (col + 0.5) * self.resolution, (row + 0.5) * self.resolution
        c, s = math.cos(self.origin.yaw), math.sin(self.origin.yaw)
        return self.origin.x + c * gx - s * gy, self.origin.y + s * gx + c * gy

    def contains(self, x: float, y: float) -> bool:
        gx, gy = self.to_grid(x, y)
        return 0.0 <= gx < self.width and 0.0 <= gy < self.height

    def _require_inside(self, pose: Pose2D):
        if not self.contains(pose.x, pose.y):
            raise PoseOutOfBounds(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the map")


# -- map files ----------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedImage("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(data: bytes) -> np.ndarray:
    """Decode a binary 8-bit grayscale (P5) image into a (rows, cols) uint8 array."""
    if not data.startswith(b"P5"):
        raise MalformedImage("not a binary PGM (P5) image")
    tokens, pos = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedImage(f"bad PGM header: {exc}") from None
    if width <= 0 or height <= 0:
        raise MalformedImage("PGM dimensions must be positive")
    if not 0 < maxval <= 255:
        raise MalformedImage(f"only 8-bit PGM supported (maxval {maxval})")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MalformedImage("missing whitespace after PGM header")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=pos + 1)
    if pixels.size != width * height:
        raise DimensionMismatch(
            f"PGM payload has {pixels.size} bytes, header says {width}x{height}")
    return pixels.reshape(height, width)


def write_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    rows, cols = pixels.shape
    return b"P5\n%d %d\n255\n" % (cols, rows) + pixels.tobytes()


def load_map(image: bytes, metadata: Mapping) -> GridMap:
    """Build a grid from map-server style image bytes and metadata.

    Occupancy probability is ``(255 - pixel) / 255`` (``pixel / 255`` when
    ``negate`` is set); at or above ``occupied_thresh`` a cell is occupied, at
    or below ``free_thresh`` it is free, otherwise unknown.
    """
    try:
        resolution = float(metadata["resolution"])
        ox, oy, oyaw = (float(v) for v in metadata.get("origin", (0.0, 0.0, 0.0)))
        occ = float(metadata.get("occupied_thresh", 0.65))
        free = float(metadata.get("free_thresh", 0.196))
    except (KeyError, TypeError, ValueError) as exc:
        raise MapError(f"bad map metadata: {exc!r}") from None
    negate = bool(int(metadata.get("negate", 0)))
    if not occ > free:
        raise BadThresholds(f"occupied_thresh {occ} must exceed free_thresh {free}")

    pixels = read_pgm(image)
    rows, cols = pixels.shape
    for key, actual in (("width", cols), ("height", rows)):
        if key in metadata and int(metadata[key]) != actual:
            raise DimensionMismatch(f"metadata {key} {metadata[key]} != image {actual}")

    p = pixels.astype(float) / 255.0 if negate else (255.0 - pixels) / 255.0
    cells = np.full(pixels.shape, UNKNOWN, dtype=np.int8)
    cells[p >= occ] = OCCUPIED
    cells[p <= free] = FREE
    return GridMap(cols, rows, resolution, Pose2D(ox, oy, oyaw), cells[::-1])


def load_map_file(path: str | os.PathLike) -> GridMap:
    """Load a map from its YAML metadata file (``image`` is relative to it)."""
    path = os.fspath(path)
    with open(path) as fh:
        metadata = yaml.safe_load(fh)
    if not isinstance(metadata, dict) or "image" not in metadata:
        raise MapError(f"{path}: metadata must be a mapping with an 'image' key")
    image_path = os.path.join(os.path.dirname(path), metadata["image"])
    with open(image_path, "rb") as fh:
        return load_map(fh.read(), metadata)


def map_to_pgm(grid: GridMap) -> bytes:
    """Encode a grid with the trinary convention (0 occupied, 254 free, 205 unknown)."""
    pixels = np.full(grid.cells.shape, 205, dtype=np.uint8)
    pixels[grid.cells == FREE] = 254
    pixels[grid.cells == OCCUPIED] = 0
    return write_pgm(pixels[::-1])


# -- vehicle ------------------------------------------------------------------

@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 0.33
    max_steer: float = 0.4189
    max_speed: float = 7.0
    max_accel: float = 6.0
    max_steer_rate: float = 3.2
    footprint_radius: float = 0.2

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"vehicle parameter {name} must be positive, got {value}")


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D
    v: float = 0.0
    steer: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    lidar_beams: int = 1081
    lidar_fov: float = 1.5 * math.pi
    lidar_max_range: float = 10.0
    lidar_range_min: float = 0.0
    range_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.lidar_beams < 2:
            raise ValueError("need at least two lidar beams")


def _slew(current: float, target: float, max_delta: float) -> float:
    return current + min(max(target - current, -max_delta), max_delta)


def step(state: VehicleState, cmd: DriveCommand, params: VehicleParams, dt: float) -> VehicleState:
    """Advance the kinematic bicycle (rear-axle reference) by one explicit step.

    Steering then speed are slewed toward the clamped command, and the new
    values drive the integration.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    target_steer = min(max(cmd.steering_angle, -params.max_steer), params.max_steer)
    steer = _slew(state.steer, target_steer, params.max_steer_rate * dt)
    target_v = min(max(cmd.speed, 0.0), params.max_speed)
    v = _slew(state.v, target_v, params.max_accel * dt)

    pose = state.pose
    x = pose.x + v * math.cos(pose.yaw) * dt
    y = pose.y + v * math.sin(pose.yaw) * dt
    yaw = pose.yaw + v / params.wheelbase * math.tan(steer) * dt
    return VehicleState(Pose2D(x, y, yaw), v, steer)


# -- sensing ------------------------------------------------------------------

@numba.njit(cache=True)
def _dda(blocked, gx, gy, angles, max_cells):
    """Distance in cells to the first blocked cell along each ray, or -1 on a miss."""
    height, width = blocked.shape
    out = np.empty(angles.shape[0])
    for k in range(angles.shape[0]):
        dx = math.cos(angles[k])
        dy = math.sin(angles[k])
        i = int(math.floor(gx))
        j = int(math.floor(gy))
        if blocked[j, i]:
            out[k] = 0.0
            continue
        step_i = 1 if dx > 0 else -1
        step_j = 1 if dy > 0 else -1
        if dx != 0.0:
            edge = (i + 1) if dx > 0 else i
            t_max_x = (edge - gx) / dx
            t_delta_x = abs(1.0 / dx)
        else:
            t_max_x = math.inf
            t_delta_x = math.inf
        if dy != 0.0:
            edge = (j + 1) if dy > 0 else j
            t_max_y = (edge - gy) / dy
            t_delta_y = abs(1.0 / dy)
        else:
            t_max_y = math.inf
            t_delta_y = math.inf
        result = -1.0
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_delta_x
                i += step_i
            else:
                t = t_max_y
                t_max_y += t_delta_y
                j += step_j
            if t > max_cells:
                break
            # leaving the grid counts as a hit: nothing beyond the map is known free
            if i < 0 or j < 0 or i >= width or j >= height or blocked[j, i]:
                result = t
                break
        out[k] = result
    return out


def beam_angles(config: SimConfig) -> tuple[float, float, float]:
    """(angle_min, angle_max, increment) of the scan, relative to the heading."""
    half = config.lidar_fov / 2.0
    return -half, half, config.lidar_fov / (config.lidar_beams - 1)


def raycast_scan(grid: GridMap, pose: Pose2D, config: SimConfig, t: float = 0.0,
                 rng: np.random.Generator | None = None) -> Scan:
    """Simulated scan by grid traversal; beams with no hit in range read ``inf``."""
    grid._require_inside(pose)
    angle_min, angle_max, inc = beam_angles(config)
    rel = angle_min + inc * np.arange(config.lidar_beams)
    gx, gy = grid.to_grid(pose.x, pose.y)
    cells = _dda(grid.blocked, gx, gy, rel + (pose.yaw - grid.origin.yaw),
                 config.lidar_max_range / grid.resolution)
    ranges = cells * grid.resolution
    if rng is not None and config.range_noise_std > 0:
        ranges = ranges + rng.normal(0.0, config.range_noise_std, ranges.shape)
    ranges = np.clip(ranges, config.lidar_range_min, config.lidar_max_range)
    ranges[cells < 0] = math.inf
    return Scan(t, angle_min, angle_max, inc, config.lidar_range_min,
                config.lidar_max_range, ranges)


def check_collision(grid: GridMap, pose: Pose2D, footprint_radius: float) -> bool:
    """True iff the center of any blocked cell lies within the footprint circle."""
    grid._require_inside(pose)
    gx, gy = grid.to_grid(pose.x, pose.y)
    r = footprint_radius / grid.resolution
    c0, c1 = max(int(math.floor(gx - r - 0.5)), 0), min(int(math.ceil(gx + r + 0.5)), grid.width)
    r0, r1 = max(int(math.floor(gy - r - 0.5)), 0), min(int(math.ceil(gy + r + 0.5)), grid.height)
    window = grid.blocked[r0:r1, c0:c1]
    if not window.any():
        return False
    cy, cx = np.nonzero(window)
    d2 = (cx + c0 + 0.5 - gx) ** 2 + (cy + r0 + 0.5 - gy) ** 2
    return bool(np.any(d2 <= r * r))
