"""Trajectory evaluation: association, Umeyama alignment, APE and RPE.

Errors are planar: ``z`` is carried by trajectories but ignored here. All
statistics use the population convention (``std`` divides by ``n``).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .paths import ReferencePath
from .trajio import Trajectory


class MetricsError(ValueError):
    pass


class NoMatches(MetricsError):
    pass


class DegenerateInput(MetricsError):
    pass


class DeltaTooLarge(MetricsError):
    pass


class LengthMismatch(MetricsError):
    pass


ALIGN_MODES = ("none", "rigid", "similarity")
RELATIONS = ("translation", "yaw")


def wrap(a):
    """Vectorized wrap into (-pi, pi]."""
    w = np.remainder(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w <= -np.pi, w + 2 * np.pi, w)


@dataclass(frozen=True)
class Association:
    pairs: np.ndarray  # (k, 2): ref index, est index
    max_t_diff: float

    def __len__(self):
        return len(self.pairs)

    @property
    def ref_idx(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def est_idx(self) -> np.ndarray:
        return self.pairs[:, 1]


def associate(ref: Trajectory, est: Trajectory, max_t_diff: float = 0.01) -> Association:
    """Pair samples by nearest timestamp, keeping both index sequences increasing.

    Unstamped trajectories (e.g. KITTI) are paired index by index.
    """
    if len(ref) == 0 or len(est) == 0:
        raise NoMatches("cannot associate an empty trajectory")
    if not (ref.stamped and est.stamped):
        n = min(len(ref), len(est))
        idx = np.arange(n)
        return Association(np.column_stack([idx, idx]), max_t_diff)

    pairs = []
    lo = 0
    for i, t in enumerate(est.t):
        if lo >= len(ref):
            break
        j = lo + int(np.searchsorted(ref.t[lo:], t))
        candidates = [k for k in (j - 1, j) if lo <= k < len(ref)]
        best = min(candidates, key=lambda k: (abs(ref.t[k] - t), k))
        if abs(ref.t[best] - t) <= max_t_diff:
            pairs.append((best, i))
            lo = best + 1
    if not pairs:
        raise NoMatches(f"no timestamps within {max_t_diff} s")
    return Association(np.array(pairs, dtype=int), max_t_diff)


@dataclass(frozen=True)
class AlignmentTransform:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    @property
    def angle(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    @classmethod
    def identity(cls) -> "AlignmentTransform":
        return cls(np.eye(2), np.zeros(2), 1.0)


def umeyama_align(ref_points, est_points, with_scale: bool = False) -> AlignmentTransform:
    """Least-squares transform with ``ref ~ s R est + t`` over paired planar points."""
    ref = np.asarray(ref_points, dtype=float)[:, :2]
    est = np.asarray(est_points, dtype=float)[:, :2]
    if ref.shape != est.shape:
        raise LengthMismatch("point sets differ in shape")
    if len(ref) < 2:
        raise DegenerateInput("need at least two point pairs")
    mu_ref, mu_est = ref.mean(axis=0), est.mean(axis=0)
    d_ref, d_est = ref - mu_ref, est - mu_est
    var_est = np.mean(np.sum(d_est ** 2, axis=1))
    if var_est < 1e-300 or np.mean(np.sum(d_ref ** 2, axis=1)) < 1e-300:
        raise DegenerateInput("all points coincide")
    cov = d_ref.T @ d_est / len(ref)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(2)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[1, 1] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_est) if with_scale else 1.0
    return AlignmentTransform(R, mu_ref - s * R @ mu_est, s)


@dataclass(frozen=True)
class MetricStats:
    mean: float
    rmse: float
    median: float
    std: float
    min: float
    max: float
    sse: float

    @classmethod
    def from_values(cls, values) -> "MetricStats":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            raise MetricsError("no error values")
        sse = float(np.sum(v * v))
        return cls(
            mean=float(np.mean(v)),
            rmse=math.sqrt(sse / v.size),
            median=float(np.median(v)),
            std=float(np.std(v)),
            min=float(np.min(v)),
            max=float(np.max(v)),
            sse=sse,
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ErrorSeries:
    values: np.ndarray
    xy: np.ndarray
    est_idx: np.ndarray
    relation: str = "translation"
    transform: AlignmentTransform = field(default_factory=AlignmentTransform.identity)

    def __len__(self):
        return len(self.values)


def _check_relation(relation: str):
    if relation not in RELATIONS:
        raise ValueError(f"relation must be one of {RELATIONS}, got {relation!r}")


def ape(ref: Trajectory, est: Trajectory, align: str = "rigid", relation: str = "translation",
        max_t_diff: float = 0.01) -> tuple[ErrorSeries, MetricStats]:
    """Absolute pose error of ``est`` against ``ref`` after optional alignment."""
    _check_relation(relation)
    if align not in ALIGN_MODES:
        raise ValueError(f"align must be one of {ALIGN_MODES}, got {align!r}")
    assoc = associate(ref, est, max_t_diff)
    ref_xy = ref.xy[assoc.ref_idx]
    est_xy = est.xy[assoc.est_idx]
    transform = AlignmentTransform.identity()
    if align != "none":
        transform = umeyama_align(ref_xy, est_xy, with_scale=align == "similarity")
    aligned = transform.apply(est_xy)
    if relation == "translation":
        values = np.hypot(*(ref_xy - aligned).T)
    else:
        yaw_est = est.yaw[assoc.est_idx] + transform.angle
        values = np.abs(wrap(ref.yaw[assoc.ref_idx] - yaw_est))
    series = ErrorSeries(values, aligned, assoc.est_idx, relation, transform)
    return series, MetricStats.from_values(values)


def _relative(xy: np.ndarray, yaw: np.ndarray, delta: int):
    """Motion from pose i to pose i + delta, expressed in frame i."""
    d = xy[delta:] - xy[:-delta]
    c, s = np.cos(yaw[:-delta]), np.sin(yaw[:-delta])
    local = np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])
    return local, yaw[delta:] - yaw[:-delta]


def rpe(ref: Trajectory, est: Trajectory, delta: int = 1, relation: str = "translation",
        max_t_diff: float = 0.01) -> tuple[ErrorSeries, MetricStats]:
    """Relative pose error over ``delta`` associated pairs.

    Compares ``inv(ref_i) ref_{i+delta}`` with ``inv(est_i) est_{i+delta}``;
    no alignment is needed since the result is invariant to rigid placement.
    """
    _check_relation(relation)
    if delta < 1:
        raise DeltaTooLarge("delta must be at least 1")
    assoc = associate(ref, est, max_t_diff)
    if len(assoc) <= delta:
        raise DeltaTooLarge(f"{len(assoc)} associated poses, delta {delta}")
    ref_t, ref_r = _relative(ref.xy[assoc.ref_idx], ref.yaw[assoc.ref_idx], delta)
    est_t, est_r = _relative(est.xy[assoc.est_idx], est.yaw[assoc.est_idx], delta)
    if relation == "translation":
        # the error's translation is R(ref)^T (t_est - t_ref); rotation keeps the norm
        values = np.hypot(*(est_t - ref_t).T)
    else:
        values = np.abs(wrap(est_r - ref_r))
    idx = assoc.est_idx[:-delta]
    series = ErrorSeries(values, est.xy[idx], idx, relation)
    return series, MetricStats.from_values(values)


def error_mapped_trajectory(points, series: ErrorSeries) -> list[tuple[float, float, float]]:
    """``(x, y, error)`` records for color-mapped plotting.

    ``points`` is an (n, 2) array or a trajectory with one pose per error value.
    """
    xy = points.xy if isinstance(points, Trajectory) else np.asarray(points, dtype=float)[:, :2]
    if len(xy) != len(series.values):
        raise LengthMismatch(f"{len(xy)} points for {len(series.values)} error values")
    return [(float(x), float(y), float(e)) for (x, y), e in zip(xy, series.values)]


def error_map_csv(records) -> str:
    lines = ["x,y,error"]
    lines += [f"{x:.9g},{y:.9g},{e:.9g}" for x, y, e in records]
    return "\n".join(lines) + "\n"


def project_onto_reference(est: Trajectory, ref: Trajectory, closed: bool = True) -> Trajectory:
    """Closest reference point for every estimated pose, stamped like ``est``.

    Turns an untimed reference line into a reference trajectory that can be
    associated with ``est`` by time; the projected yaw is the segment heading.
    """
    xy = ref.xy
    keep = np.ones(len(xy), dtype=bool)
    keep[1:] = np.any(np.diff(xy, axis=0) != 0, axis=1)
    line = ReferencePath(np.column_stack([xy[keep], np.ones(keep.sum())]), closed=closed)
    out_xy = np.empty((len(est), 2))
    out_yaw = np.empty(len(est))
    hint = None
    for i, (x, y) in enumerate(est.xy):
        seg, frac, _ = line.closest(x, y, hint)
        p = line.point_at(line.arc_position(seg, frac))
        out_xy[i] = p.x, p.y
        out_yaw[i] = line.headings[seg]
        hint = seg
    return Trajectory.from_planar(out_xy[:, 0], out_xy[:, 1], out_yaw,
                                  est.t if est.stamped else None)


@dataclass
class MetricBundle:
    """APE and RPE results for one run, as handed to reports and telemetry."""

    ape: MetricStats
    rpe: MetricStats
    ape_series: ErrorSeries
    options: dict = field(default_factory=dict)

    def error_map(self) -> list[tuple[float, float, float]]:
        return error_mapped_trajectory(self.ape_series.xy, self.ape_series)

    def to_json(self) -> str:
        return json.dumps({"ape": self.ape.as_dict(), "rpe": self.rpe.as_dict(),
                           "options": self.options}, sort_keys=True)


def evaluate(ref: Trajectory, est: Trajectory, align: str = "rigid",
             relation: str = "translation", delta: int = 1,
             max_t_diff: float = 0.01) -> MetricBundle:
    series, ape_stats = ape(ref, est, align, relation, max_t_diff)
    _, rpe_stats = rpe(ref, est, delta, relation, max_t_diff)
    options = {"align": align, "relation": relation, "delta": delta, "max_t_diff": max_t_diff}
    return MetricBundle(ape_stats, rpe_stats, series, options)
