import math

import numpy as np
import pytest

from racebench.messages import Pose2D
from racebench.sim import FREE, OCCUPIED, GridMap


def room(size=10.0, resolution=0.05, wall=1):
    """Free square [0, size]² surrounded by ``wall`` cells of occupied border."""
    n = int(round(size / resolution)) + 2 * wall
    cells = np.full((n, n), FREE, dtype=np.int8)
    cells[:wall, :] = OCCUPIED
    cells[-wall:, :] = OCCUPIED
    cells[:, :wall] = OCCUPIED
    cells[:, -wall:] = OCCUPIED
    return GridMap(n, n, resolution, Pose2D(-wall * resolution, -wall * resolution, 0.0), cells)


def circle_log(radius=5.0, speed=2.0, loops=3.0, dt=0.01, phase0=-math.pi / 2, clockwise=False,
               t0=0.0):
    """Constant-speed circle around the origin as (t, x, y, yaw) arrays."""
    omega = speed / radius * (-1 if clockwise else 1)
    period = 2 * math.pi * radius / speed
    n = int(round(loops * period / dt)) + 1
    t = t0 + np.arange(n) * dt
    a = phase0 + omega * (t - t0)
    x, y = radius * np.cos(a), radius * np.sin(a)
    yaw = a + math.copysign(math.pi / 2, omega)
    return t, x, y, yaw, period


@pytest.fixture
def room_map():
    return room()
