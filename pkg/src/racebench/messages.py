"""Message types, the in-process topic bus, and pipeline stage contracts.

Topic names and field semantics follow the usual racecar stack conventions
(``/scan``, ``/odom``, ``/map``, ``/drive``, optionally namespaced as
``/ego_racecar/scan`` and so on), but delivery is synchronous and in-process so
a simulation driven through the bus stays deterministic.
"""
from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"pose position must be finite, got ({self.x}, {self.y})")
        if not math.isfinite(self.yaw):
            raise ValueError(f"pose yaw must be finite, got {self.yaw}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))


@dataclass(frozen=True)
class StampedPose:
    t: float
    pose: Pose2D

    def __post_init__(self):
        if not math.isfinite(self.t) or self.t < 0:
            raise ValueError(f"timestamp must be finite and non-negative, got {self.t}")


@dataclass(frozen=True)
class Scan:
    """Planar laser scan; beams without a return hold ``math.inf``."""

    t: float
    angle_min: float
    angle_max: float
    angle_increment: float
    range_min: float
    range_max: float
    ranges: np.ndarray

    def __post_init__(self):
        if self.angle_increment <= 0:
            raise ValueError("angle_increment must be positive")
        ranges = np.array(self.ranges, dtype=float)
        ranges.flags.writeable = False
        object.__setattr__(self, "ranges", ranges)
        expected = math.floor((self.angle_max - self.angle_min) / self.angle_increment + 1e-9) + 1
        if ranges.shape != (expected,):
            raise ValueError(f"scan has {ranges.size} ranges, expected {expected}")
        hit = ranges[ranges != math.inf]
        if np.any(hit < self.range_min) or np.any(hit > self.range_max) or np.any(np.isnan(hit)):
            raise ValueError(f"ranges outside [{self.range_min}, {self.range_max}]")

    def angle(self, index: float) -> float:
        return self.angle_min + index * self.angle_increment


@dataclass(frozen=True)
class OdomSample:
    t: float
    pose: Pose2D
    v_linear: float
    v_angular: float


@dataclass(frozen=True)
class DriveCommand:
    t: float
    speed: float
    steering_angle: float

    def __post_init__(self):
        if not (math.isfinite(self.speed) and math.isfinite(self.steering_angle)):
            raise ValueError("drive command fields must be finite")


@dataclass(frozen=True)
class PosePath:
    """A sequence of stamped poses, as carried on path-valued topics."""

    poses: tuple[StampedPose, ...] = ()


_TOPIC_CHARS = re.compile(r"^[a-z0-9_/]*$")


@dataclass(frozen=True)
class TopicName:
    namespace: str
    base: str

    def __post_init__(self):
        for part in (self.namespace, self.base):
            if not _TOPIC_CHARS.match(part):
                raise ValueError(f"invalid topic component {part!r}: only [a-z0-9_/] allowed")
        if not self.base or self.base.startswith("/") or self.base.endswith("/"):
            raise ValueError(f"invalid topic base {self.base!r}")
        if self.namespace and (not self.namespace.startswith("/") or self.namespace.endswith("/")):
            raise ValueError(f"namespace must look like '/name', got {self.namespace!r}")

    @property
    def full(self) -> str:
        return f"{self.namespace}/{self.base}"

    @classmethod
    def parse(cls, name: str) -> "TopicName":
        if not name.startswith("/"):
            raise ValueError(f"topic name must be absolute, got {name!r}")
        namespace, _, base = name.rpartition("/")
        return cls(namespace, base)

    def __str__(self):
        return self.full


def topic(base: str, namespace: str = "") -> TopicName:
    return TopicName(namespace, base)


class KindMismatch(TypeError):
    """A message or handler kind conflicts with a topic's binding."""


class Subscription:
    def __init__(self, bus: "Bus", name: str, handler: Callable[[Any], None]):
        self._bus = bus
        self.topic = name
        self.handler = handler
        self.active = True

    def unsubscribe(self):
        if self.active:
            self._bus._topics[self.topic].subscribers.remove(self)
            self.active = False


@dataclass
class _TopicEntry:
    kind: type | None = None
    subscribers: list[Subscription] = field(default_factory=list)
    count: int = 0
    latest: Any = None


@functools.lru_cache(maxsize=1024)
def _parse_name(name: str) -> str:
    return TopicName.parse(name).full


def _name(t: TopicName | str) -> str:
    if isinstance(t, TopicName):
        return t.full
    return _parse_name(t)


class Bus:
    """Synchronous publish/subscribe registry keyed by full topic name.

    Each topic is bound to exactly one message kind (the Python type of the
    first message published, or the kind declared by the first subscriber).
    """

    def __init__(self):
        self._topics: dict[str, _TopicEntry] = {}

    def _bind(self, name: str, kind: type | None) -> _TopicEntry:
        entry = self._topics.setdefault(name, _TopicEntry())
        if kind is not None:
            if entry.kind is None:
                entry.kind = kind
            elif entry.kind is not kind:
                raise KindMismatch(
                    f"topic {name} carries {entry.kind.__name__}, not {kind.__name__}"
                )
        return entry

    def publish(self, topic: TopicName | str, msg: Any) -> int:
        name = _name(topic)
        entry = self._bind(name, type(msg))
        entry.count += 1
        entry.latest = msg
        # snapshot so handlers may (un)subscribe during delivery
        subscribers = list(entry.subscribers)
        for sub in subscribers:
            sub.handler(msg)
        return len(subscribers)

    def subscribe(self, topic: TopicName | str, handler: Callable[[Any], None],
                  kind: type | None = None) -> Subscription:
        name = _name(topic)
        entry = self._bind(name, kind)
        sub = Subscription(self, name, handler)
        entry.subscribers.append(sub)
        return sub

    def kind(self, topic: TopicName | str) -> type | None:
        entry = self._topics.get(_name(topic))
        return entry.kind if entry else None

    def latest(self, topic: TopicName | str) -> Any:
        entry = self._topics.get(_name(topic))
        return entry.latest if entry else None

    def publish_count(self, topic: TopicName | str) -> int:
        entry = self._topics.get(_name(topic))
        return entry.count if entry else 0

    def subscriber_count(self, topic: TopicName | str) -> int:
        entry = self._topics.get(_name(topic))
        return len(entry.subscribers) if entry else 0

    def topics(self) -> list[str]:
        return sorted(self._topics)


class Layer(enum.IntEnum):
    SENSING = 0
    PREPROCESSING = 1
    PERCEPTION = 2
    LOCALIZATION_MAPPING = 3
    PLANNING = 4
    BEHAVIOR = 5
    CONTROL = 6
    ACTUATION = 7


@dataclass(frozen=True)
class StageDescriptor:
    name: str
    layer: Layer
    inputs: frozenset[str] = frozenset()
    outputs: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "inputs", frozenset(_name(t) for t in self.inputs))
        object.__setattr__(self, "outputs", frozenset(_name(t) for t in self.outputs))
        overlap = self.inputs & self.outputs
        if overlap:
            raise ValueError(f"stage {self.name} both consumes and produces {sorted(overlap)}")


@dataclass(frozen=True)
class MissingProducer:
    topic: str
    consumer: str
    severity = "error"


@dataclass(frozen=True)
class DuplicateProducer:
    topic: str
    producers: tuple[str, ...]
    severity = "error"


@dataclass(frozen=True)
class CrossLayerWarning:
    topic: str
    producer: str
    consumer: str
    producer_layer: Layer
    consumer_layer: Layer
    severity = "warning"


def validate_pipeline(stages: Iterable[StageDescriptor]) -> list:
    """Check a stage graph for wiring problems.

    Returns errors (``MissingProducer``, ``DuplicateProducer``) and warnings
    (``CrossLayerWarning`` for any edge that does not flow from a lower layer
    to a strictly higher one). The result order follows stage order, then
    sorted topic names, so the same input always yields the same list.
    """
    stages = list(stages)
    producers: dict[str, list[StageDescriptor]] = {}
    for stage in stages:
        for t in sorted(stage.outputs):
            producers.setdefault(t, []).append(stage)

    violations: list = []
    for t in sorted(producers):
        if len(producers[t]) > 1:
            violations.append(DuplicateProducer(t, tuple(s.name for s in producers[t])))

    for stage in stages:
        for t in sorted(stage.inputs):
            if t not in producers:
                violations.append(MissingProducer(t, stage.name))
                continue
            for src in producers[t]:
                if not src.layer < stage.layer:
                    violations.append(
                        CrossLayerWarning(t, src.name, stage.name, src.layer, stage.layer)
                    )
    return violations


def pipeline_errors(violations: Iterable) -> list:
    return [v for v in violations if v.severity == "error"]
