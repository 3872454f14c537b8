"""Reference paths: polyline geometry with a speed profile."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class PathExhausted(RuntimeError):
    """No path left ahead of the vehicle on an open path."""


@dataclass(frozen=True)
class PathPoint:
    x: float
    y: float
    speed: float
    heading: float
    s: float


class ReferencePath:
    """Ordered ``(x, y, speed)`` points, optionally closed into a loop.

    A closed path has a segment from the last point back to the first; a
    duplicated closing point is dropped on construction.
    """

    def __init__(self, points, closed: bool = False):
        pts = np.array(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("path points must be (x, y, speed) rows")
        if closed and len(pts) > 2 and np.array_equal(pts[0, :2], pts[-1, :2]):
            pts = pts[:-1]
        if len(pts) < 2:
            raise ValueError("a path needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("path points must be finite")
        if np.any(pts[:, 2] <= 0):
            raise ValueError("path speeds must be positive")
        ends = np.vstack([pts[1:, :2], pts[:1, :2]]) if closed else pts[1:, :2]
        seg = ends - pts[: len(ends), :2]
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths == 0):
            raise ValueError("consecutive path points must be distinct")

        pts.flags.writeable = False
        self.points = pts
        self.closed = closed
        self._start = pts[: len(ends), :2]
        self._seg = seg
        self._len = lengths
        self._len2 = lengths ** 2
        self.headings = np.arctan2(seg[:, 1], seg[:, 0])
        self.s = np.concatenate([[0.0], np.cumsum(lengths)])
        self.length = float(self.s[-1])

    def __len__(self):
        return len(self.points)

    @property
    def n_segments(self) -> int:
        return len(self._seg)

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def speeds(self) -> np.ndarray:
        return self.points[:, 2]

    def _project(self, idx: np.ndarray, x: float, y: float):
        rel_x = x - self._start[idx, 0]
        rel_y = y - self._start[idx, 1]
        u = (rel_x * self._seg[idx, 0] + rel_y * self._seg[idx, 1]) / self._len2[idx]
        np.clip(u, 0.0, 1.0, out=u)
        dx = rel_x - u * self._seg[idx, 0]
        dy = rel_y - u * self._seg[idx, 1]
        return u, dx * dx + dy * dy

    def closest(self, x: float, y: float, hint: int | None = None,
                window: int = 40) -> tuple[int, float, float]:
        """Closest point on the polyline as ``(segment, fraction, distance)``.

        With a ``hint`` only segments near it are searched; the search falls
        back to the whole path when the best match sits on the window edge.
        Ties go to the lower segment index.
        """
        n = self.n_segments
        if hint is not None and 2 * window + 1 < n:
            if self.closed:
                idx = np.arange(hint - window, hint + window + 1) % n
            else:
                idx = np.arange(max(hint - window, 0), min(hint + window + 1, n))
            u, d2 = self._project(idx, x, y)
            best = _first_min(idx, d2)
            k = int(np.flatnonzero(idx == best)[0])
            on_edge = (k == 0 and idx[0] != 0) or (k == len(idx) - 1 and idx[-1] != n - 1)
            if not on_edge:
                return int(best), float(u[k]), math.sqrt(d2[k])
        idx = np.arange(n)
        u, d2 = self._project(idx, x, y)
        best = _first_min(idx, d2)
        return int(best), float(u[best]), math.sqrt(d2[best])

    def arc_position(self, segment: int, fraction: float) -> float:
        return float(self.s[segment] + fraction * self._len[segment])

    def point_at(self, s: float) -> PathPoint:
        """Interpolated point at arc length ``s`` (wrapped on closed paths)."""
        if self.closed:
            s = s % self.length
        elif s > self.length:
            raise PathExhausted(f"arc length {s:.3f} beyond path end {self.length:.3f}")
        s = max(s, 0.0)
        i = min(int(np.searchsorted(self.s, s, side="right")) - 1, self.n_segments - 1)
        f = (s - self.s[i]) / self._len[i]
        j = (i + 1) % len(self.points)
        p, q = self.points[i], self.points[j]
        return PathPoint(
            p[0] + f * (q[0] - p[0]),
            p[1] + f * (q[1] - p[1]),
            p[2] + f * (q[2] - p[2]),
            float(self.headings[i]),
            s,
        )


def _first_min(idx: np.ndarray, d2: np.ndarray) -> int:
    ties = idx[d2 == d2.min()]
    return int(ties.min())
