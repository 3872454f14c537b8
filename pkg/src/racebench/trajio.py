"""Readers and writers for TUM, KITTI and CSV trajectory files.

Quaternions are stored internally as ``(w, x, y, z)``; TUM's ``qx qy qz qw``
order is translated at the file boundary. Writers emit LF line endings and
numbers in their shortest round-trip form (timestamps with nine decimals), so
``parse(write(T))`` reproduces ``T``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .paths import ReferencePath


class TrajectoryFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class BadFieldCount(TrajectoryFormatError):
    pass


class NonNumeric(TrajectoryFormatError):
    pass


class NonMonotonicTime(TrajectoryFormatError):
    pass


class NonRotation(TrajectoryFormatError):
    pass


class MissingColumn(TrajectoryFormatError):
    pass


class EmptyFile(TrajectoryFormatError):
    pass


class FormatKind(str, enum.Enum):
    TUM = "tum"
    KITTI = "kitti"
    CSV = "csv"


@dataclass(eq=False)
class Trajectory:
    """Poses with optional timestamps.

    ``t`` holds seconds when ``stamped`` is true and sample indices otherwise.
    """

    t: np.ndarray
    xyz: np.ndarray
    quat: np.ndarray  # (n, 4) w, x, y, z
    stamped: bool = True

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.quat = np.asarray(self.quat, dtype=float).reshape(-1, 4)
        if not (len(self.t) == len(self.xyz) == len(self.quat)):
            raise ValueError("timestamps, positions and orientations differ in length")
        if len(self.quat):
            norms = np.linalg.norm(self.quat, axis=1)
            if np.any(norms == 0) or not np.all(np.isfinite(norms)):
                raise ValueError("orientation quaternions must be non-zero and finite")
            self.quat = self.quat / norms[:, None]

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls, stamped: bool = True) -> "Trajectory":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), stamped)

    @classmethod
    def from_planar(cls, x, y, yaw, t=None) -> "Trajectory":
        x, y, yaw = (np.asarray(a, dtype=float).reshape(-1) for a in (x, y, yaw))
        stamped = t is not None
        t = np.arange(len(x), dtype=float) if t is None else np.asarray(t, dtype=float)
        xyz = np.column_stack([x, y, np.zeros_like(x)])
        quat = np.column_stack([np.cos(yaw / 2), np.zeros_like(x), np.zeros_like(x), np.sin(yaw / 2)])
        return cls(t, xyz, quat, stamped)

    @property
    def xy(self) -> np.ndarray:
        return self.xyz[:, :2]

    @property
    def yaw(self) -> np.ndarray:
        w, x, y, z = self.quat.T
        return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def rotation_matrices(self) -> np.ndarray:
        return Rotation.from_quat(self.quat[:, [1, 2, 3, 0]]).as_matrix()

    def subset(self, idx) -> "Trajectory":
        idx = np.asarray(idx, dtype=int)
        return Trajectory(self.t[idx], self.xyz[idx], self.quat[idx], self.stamped)


def _lines(text: str):
    for number, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield number, line


def _floats(fields: list[str], number: int) -> list[float]:
    try:
        values = [float(f) for f in fields]
    except ValueError:
        raise NonNumeric(f"non-numeric field in {' '.join(fields)!r}", number) from None
    if not all(math.isfinite(v) for v in values):
        raise NonNumeric("non-finite value", number)
    return values


def _check_quaternion(q, number: int):
    if math.fsum(v * v for v in q) == 0.0:
        raise NonNumeric("zero-length quaternion", number)


def parse_tum(text: str) -> Trajectory:
    """Parse ``t x y z qx qy qz qw`` lines; '#' lines are comments."""
    rows = []
    last_t = -math.inf
    for number, line in _lines(text):
        fields = line.split()
        if len(fields) != 8:
            raise BadFieldCount(f"expected 8 fields, found {len(fields)}", number)
        values = _floats(fields, number)
        if values[0] < last_t:
            raise NonMonotonicTime(f"timestamp {values[0]} precedes {last_t}", number)
        _check_quaternion(values[4:], number)
        last_t = values[0]
        rows.append(values)
    if not rows:
        return Trajectory.empty()
    data = np.array(rows)
    return Trajectory(data[:, 0], data[:, 1:4], data[:, [7, 4, 5, 6]])


def _nearest_rotation(R: np.ndarray, number: int) -> np.ndarray:
    if np.linalg.det(R) <= 0:
        raise NonRotation("rotation block has non-positive determinant", number)
    if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-3:
        raise NonRotation("rotation block is not orthonormal", number)
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def _quat_from_matrices(R: np.ndarray) -> np.ndarray:
    q = Rotation.from_matrix(R).as_quat()[:, [3, 0, 1, 2]]
    q[q[:, 0] < 0] *= -1
    return q


def parse_kitti(text: str) -> Trajectory:
    """Parse rows of a flattened 3x4 ``[R | t]`` matrix; sample index is the time."""
    rotations, positions = [], []
    for number, line in _lines(text):
        fields = line.split()
        if len(fields) != 12:
            raise BadFieldCount(f"expected 12 fields, found {len(fields)}", number)
        M = np.array(_floats(fields, number)).reshape(3, 4)
        rotations.append(_nearest_rotation(M[:, :3], number))
        positions.append(M[:, 3])
    if not rotations:
        return Trajectory.empty(stamped=False)
    n = len(rotations)
    return Trajectory(np.arange(n, dtype=float), np.array(positions),
                      _quat_from_matrices(np.array(rotations)), stamped=False)


CSV_ALIASES = {
    "t": ("t", "time", "timestamp", "t_s"),
    "x": ("x", "x_m"),
    "y": ("y", "y_m"),
    "z": ("z", "z_m"),
    "yaw": ("yaw", "psi", "psi_rad", "heading"),
    "speed": ("speed", "v", "vx", "vx_mps"),
}


def parse_csv(text: str, columns: dict[str, str] | None = None,
              closed: bool = False) -> tuple[Trajectory, ReferencePath | None]:
    """Parse a comma-separated file with a header naming its columns.

    ``x`` and ``y`` are required; ``t``, ``z``, ``yaw`` and ``speed`` are
    optional (``columns`` overrides the header name used for each). A speed
    column additionally yields a :class:`ReferencePath`.
    """
    lines = _lines(text)
    try:
        header_no, header_line = next(lines)
    except StopIteration:
        raise EmptyFile("no header line") from None
    header = [h.strip().lower() for h in header_line.split(",")]
    positions = {}
    for role, aliases in CSV_ALIASES.items():
        names = (columns[role].lower(),) if columns and role in columns else aliases
        found = [header.index(n) for n in names if n in header]
        if found:
            positions[role] = found[0]
    for role in ("x", "y"):
        if role not in positions:
            raise MissingColumn(f"missing column {role!r} in header {header_line!r}", header_no)

    rows = []
    for number, line in lines:
        fields = line.split(",")
        if len(fields) != len(header):
            raise BadFieldCount(f"expected {len(header)} fields, found {len(fields)}", number)
        values = _floats([fields[i] for i in positions.values()], number)
        row = dict(zip(positions, values))
        if "t" in row and rows and row["t"] < rows[-1]["t"]:
            raise NonMonotonicTime(f"timestamp {row['t']} precedes {rows[-1]['t']}", number)
        rows.append(row)

    def col(role, default=0.0):
        return np.array([r.get(role, default) for r in rows], dtype=float)

    stamped = "t" in positions
    x, y, yaw = col("x"), col("y"), col("yaw")
    traj = Trajectory.from_planar(x, y, yaw, col("t") if stamped else None)
    traj.xyz[:, 2] = col("z")
    path = None
    if "speed" in positions and len(rows) >= 2:
        try:
            path = ReferencePath(np.column_stack([x, y, col("speed")]), closed=closed)
        except ValueError as exc:
            raise TrajectoryFormatError(f"invalid reference path: {exc}") from None
    return traj, path


def parse(text: str, kind: FormatKind | str, **kwargs) -> Trajectory:
    kind = FormatKind(kind)
    if kind is FormatKind.TUM:
        return parse_tum(text)
    if kind is FormatKind.KITTI:
        return parse_kitti(text)
    return parse_csv(text, **kwargs)[0]


def load(path: str, kind: FormatKind | str | None = None, **kwargs) -> Trajectory:
    kind = kind or guess_format(path)
    with open(path, newline="") as fh:
        return parse(fh.read(), kind, **kwargs)


def guess_format(path: str) -> FormatKind:
    lower = path.lower()
    if lower.endswith(".csv"):
        return FormatKind.CSV
    if "kitti" in lower:
        return FormatKind.KITTI
    return FormatKind.TUM


def fmt(value: float) -> str:
    """Shortest text that parses back to exactly ``value``."""
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def write_tum(traj: Trajectory) -> str:
    lines = []
    for t, p, q in zip(traj.t, traj.xyz, traj.quat):
        w, x, y, z = q
        lines.append(" ".join([f"{t:.9f}", *map(fmt, p), *map(fmt, (x, y, z, w))]))
    return "".join(line + "\n" for line in lines)


def write_kitti(traj: Trajectory) -> str:
    lines = []
    for R, p in zip(traj.rotation_matrices(), traj.xyz):
        M = np.column_stack([R, p])
        lines.append(" ".join(fmt(v) for v in M.reshape(-1)))
    return "".join(line + "\n" for line in lines)


def write_csv(traj: Trajectory, speeds=None) -> str:
    """Planar CSV (``yaw`` column; roll and pitch are not representable)."""
    header = (["t"] if traj.stamped else []) + ["x", "y", "z", "yaw"]
    if speeds is not None:
        speeds = np.asarray(speeds, dtype=float)
        if len(speeds) != len(traj):
            raise ValueError("speeds and trajectory differ in length")
        header.append("speed")
    lines = [",".join(header)]
    for i, (p, yaw) in enumerate(zip(traj.xyz, traj.yaw)):
        fields = [f"{traj.t[i]:.9f}"] if traj.stamped else []
        fields += [fmt(p[0]), fmt(p[1]), fmt(p[2]), fmt(yaw)]
        if speeds is not None:
            fields.append(fmt(speeds[i]))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def write(traj: Trajectory, kind: FormatKind | str) -> str:
    kind = FormatKind(kind)
    if kind is FormatKind.TUM:
        return write_tum(traj)
    if kind is FormatKind.KITTI:
        return write_kitti(traj)
    return write_csv(traj)
