"""Bundled tracks and experiment configurations.

The oval is a stadium: two 10 m straights joined by semicircles of 4 m
centerline radius, 2.2 m wide, driven counterclockwise. Running this module
regenerates the files under ``racebench/data``.
"""
from __future__ import annotations

import math
import os
from importlib import resources

import numpy as np

from .messages import Pose2D
from .sim import FREE, OCCUPIED, GridMap, map_to_pgm

STRAIGHT = 10.0
RADIUS = 4.0
HALF_WIDTH = 1.1
RESOLUTION = 0.05

CONFIG_NAMES = ("gap_follower", "pure_pursuit", "lqr", "mpc")


def data_path(*parts: str) -> str:
    return os.fspath(resources.files("racebench").joinpath("data", *parts))


def bundled_config(name: str) -> str:
    if name not in CONFIG_NAMES:
        raise KeyError(f"no bundled config {name!r}; choose from {', '.join(CONFIG_NAMES)}")
    return data_path("configs", f"{name}.yaml")


def _stadium_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    half = STRAIGHT / 2.0
    d = np.abs(np.abs(y) - RADIUS)
    right = x > half
    left = x < -half
    d = np.where(right, np.abs(np.hypot(x - half, y) - RADIUS), d)
    d = np.where(left, np.abs(np.hypot(x + half, y) - RADIUS), d)
    return d


def oval_map() -> GridMap:
    origin = Pose2D(-11.5, -6.5, 0.0)
    width, height = 460, 260
    gx = origin.x + (np.arange(width) + 0.5) * RESOLUTION
    gy = origin.y + (np.arange(height) + 0.5) * RESOLUTION
    X, Y = np.meshgrid(gx, gy)
    cells = np.where(_stadium_distance(X, Y) <= HALF_WIDTH, FREE, OCCUPIED).astype(np.int8)
    return GridMap(width, height, RESOLUTION, origin, cells)


def oval_centerline(ds: float = 0.1, v_straight: float = 5.5, a_lat: float = 5.0,
                    a_long: float = 3.0) -> np.ndarray:
    """Closed centerline as ``(x, y, yaw, speed)`` rows starting at (0, -R)."""
    half = STRAIGHT / 2.0
    arc = math.pi * RADIUS
    perimeter = 2 * STRAIGHT + 2 * arc
    n = int(round(perimeter / ds))
    s = np.arange(n) * (perimeter / n)
    rows = []
    for si in s:
        if si < half:
            x, y, yaw, k = si, -RADIUS, 0.0, 0.0
        elif si < half + arc:
            a = (si - half) / RADIUS - math.pi / 2
            x, y, yaw, k = half + RADIUS * math.cos(a), RADIUS * math.sin(a), a + math.pi / 2, 1 / RADIUS
        elif si < half + arc + STRAIGHT:
            x, y, yaw, k = half - (si - half - arc), RADIUS, math.pi, 0.0
        elif si < half + 2 * arc + STRAIGHT:
            a = (si - half - arc - STRAIGHT) / RADIUS + math.pi / 2
            x, y, yaw, k = -half + RADIUS * math.cos(a), RADIUS * math.sin(a), a + math.pi / 2, 1 / RADIUS
        else:
            x, y, yaw, k = si - perimeter, -RADIUS, 0.0, 0.0
        rows.append((x, y, math.remainder(yaw, 2 * math.pi), k))
    rows = np.array(rows)
    v = np.minimum(v_straight, np.sqrt(a_lat / np.maximum(rows[:, 3], 1e-9)))
    step = perimeter / n
    # two passes around the loop settle the wrap-around
    for _ in range(2):
        for i in range(n):
            v[i] = min(v[i], math.sqrt(v[i - 1] ** 2 + 2 * a_long * step))
        for i in range(n - 1, -1, -1):
            j = (i + 1) % n
            v[i] = min(v[i], math.sqrt(v[j] ** 2 + 2 * a_long * step))
    rows[:, 3] = v
    return rows


def dead_end_map() -> GridMap:
    """A straight 2 m wide corridor closed at the far end."""
    width, height = 200, 80
    cells = np.full((height, width), OCCUPIED, dtype=np.int8)
    cells[20:60, 10:150] = FREE
    return GridMap(width, height, RESOLUTION, Pose2D(0.0, 0.0, 0.0), cells)


MAP_YAML = """image: {image}
resolution: {resolution}
origin: [{ox}, {oy}, {oyaw}]
negate: 0
occupied_thresh: 0.65
free_thresh: 0.196
"""


def write_map(grid: GridMap, directory: str, stem: str):
    with open(os.path.join(directory, f"{stem}.pgm"), "wb") as fh:
        fh.write(map_to_pgm(grid))
    with open(os.path.join(directory, f"{stem}.yaml"), "w") as fh:
        fh.write(MAP_YAML.format(image=f"{stem}.pgm", resolution=grid.resolution,
                                 ox=grid.origin.x, oy=grid.origin.y, oyaw=grid.origin.yaw))


def centerline_csv(rows: np.ndarray) -> str:
    lines = ["x,y,yaw,speed"]
    lines += [",".join(f"{v:.6f}" for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def experiment_config(controller: str, params: dict | None = None) -> str:
    """Config text for the oval; the gap follower gets no path and no reference."""
    params = params or {}
    if params:
        params_block = "  params:\n" + "\n".join(f"    {k}: {v}" for k, v in params.items())
    else:
        params_block = "  params: {}"
    text = CONFIG_TEMPLATE.format(controller=controller, params=params_block)
    if controller == "gap_follower":
        text = text.replace(PATH_BLOCK, "").replace(REFERENCE_BLOCK, "")
    return text


PATH_BLOCK = """path:
  file: ../tracks/oval_centerline.csv
  format: csv
  closed: true
"""

REFERENCE_BLOCK = """  reference:
    path: ../tracks/oval_centerline.csv
    format: csv
"""


CONFIG_TEMPLATE = """experiment_id: oval_{controller}
controller:
  name: {controller}
{params}
map: ../tracks/oval.yaml
path:
  file: ../tracks/oval_centerline.csv
  format: csv
  closed: true
start: [-1.0, -4.0, 0.0]
vehicle:
  wheelbase: 0.33
  max_steer: 0.4189
  max_speed: 7.0
  max_accel: 6.0
  max_steer_rate: 3.2
  footprint_radius: 0.2
sim:
  dt: 0.01
  control_period: 0.02
  lidar_beams: 271
  lidar_fov: 4.71238898
  lidar_max_range: 10.0
  seed: 0
  max_time: 300.0
  stall_time: 5.0
monitor:
  finish_zone:
    a: [0.0, -5.3]
    b: [0.0, -2.7]
    direction: [1.0, 0.0]
  min_lap_time: 3.0
  target_laps: 5
  reference:
    path: ../tracks/oval_centerline.csv
    format: csv
"""

CONTROLLER_PARAMS = {
    "gap_follower": {"cruise_speed": 3.5},
    "pure_pursuit": {"lookahead": 1.2},
    "lqr": {"q_lat": 1.0, "q_head": 0.5, "r_steer": 2.0},
    "mpc": {"horizon": 25, "q_lat": 1.0, "q_head": 0.5, "r_steer": 2.0},
}


def regenerate(root: str | None = None):
    root = root or data_path()
    tracks = os.path.join(root, "tracks")
    configs = os.path.join(root, "configs")
    os.makedirs(tracks, exist_ok=True)
    os.makedirs(configs, exist_ok=True)
    write_map(oval_map(), tracks, "oval")
    with open(os.path.join(tracks, "oval_centerline.csv"), "w") as fh:
        fh.write(centerline_csv(oval_centerline()))
    for name in CONFIG_NAMES:
        with open(os.path.join(configs, f"{name}.yaml"), "w") as fh:
            fh.write(experiment_config(name, CONTROLLER_PARAMS[name]))


if __name__ == "__main__":
    regenerate()
