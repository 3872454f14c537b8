"""Experiment configuration files (YAML), with line-numbered error messages."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields

import yaml

from .controllers import CONTROLLERS
from .messages import Pose2D
from .monitor import FinishZone, MonitorConfig, ReferenceConfig
from .sim import SimConfig, VehicleParams
from .trajio import FormatKind


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "", line: int | None = None):
        self.line = line
        where = source
        if line is not None:
            where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass
class ExperimentConfig:
    experiment_id: str
    controller: str
    controller_params: dict
    map_path: str
    start: Pose2D
    vehicle: VehicleParams
    sim: SimConfig
    monitor: MonitorConfig
    path_file: str | None = None
    path_format: FormatKind = FormatKind.CSV
    path_closed: bool = True
    control_period: float = 0.02
    max_time: float = 300.0
    stall_time: float = 5.0
    source: str = ""
    text: str = ""
    raw: dict = field(default_factory=dict)


def _line_index(node, prefix=(), out=None) -> dict:
    """Map key paths to 1-based line numbers from a composed YAML node tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (key.value,)
            out[path] = key.start_mark.line + 1
            _line_index(value, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            out[prefix + (i,)] = item.start_mark.line + 1
            _line_index(item, prefix + (i,), out)
    return out


class _Reader:
    def __init__(self, data: dict, lines: dict, source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def error(self, message: str, *path):
        line = None
        for k in range(len(path), 0, -1):
            if tuple(path[:k]) in self.lines:
                line = self.lines[tuple(path[:k])]
                break
        raise ConfigError(message, self.source, line)

    def get(self, *path, default=..., kind=None):
        node = self.data
        for i, key in enumerate(path):
            if not isinstance(node, dict) or key not in node:
                if default is ...:
                    self.error(f"missing key {'.'.join(map(str, path))!r}", *path[:i])
                return default
            node = node[key]
        if kind is not None and node is not None:
            try:
                if kind is float:
                    value = float(node)
                    if not math.isfinite(value):
                        raise ValueError
                    return value
                if kind is int:
                    if isinstance(node, bool) or int(node) != node:
                        raise ValueError
                    return int(node)
                if kind is bool:
                    if not isinstance(node, bool):
                        raise ValueError
                    return node
                if kind is str:
                    if not isinstance(node, str):
                        raise ValueError
                    return node
                if kind is dict:
                    if not isinstance(node, dict):
                        raise ValueError
                    return node
            except (TypeError, ValueError):
                self.error(f"{'.'.join(map(str, path))} must be {kind.__name__}, got {node!r}", *path)
        return node

    def vector(self, *path, size: int, default=...):
        value = self.get(*path, default=default)
        if value is default and default is not ...:
            return value
        try:
            out = tuple(float(v) for v in value)
        except (TypeError, ValueError):
            out = ()
        if len(out) != size:
            self.error(f"{'.'.join(map(str, path))} must be a list of {size} numbers", *path)
        return out


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def _dataclass_from(reader: _Reader, cls, section: str):
    raw = reader.get(section, default={}, kind=dict) or {}
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key in raw:
        if key not in known:
            continue
        default = known[key].default
        kwargs[key] = reader.get(section, key, kind=type(default))
    try:
        return cls(**kwargs)
    except ValueError as exc:
        reader.error(str(exc), section)


def parse_experiment_config(text: str, source: str = "", base_dir: str = ".") -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source,
                          mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", source, 1)
    r = _Reader(data, _line_index(node), source)

    experiment_id = r.get("experiment_id", kind=str)
    if not experiment_id.strip():
        r.error("experiment_id must not be empty", "experiment_id")

    name = r.get("controller", "name", kind=str)
    if name not in CONTROLLERS:
        r.error(f"unknown controller {name!r}; valid names: {', '.join(CONTROLLERS)}",
                "controller", "name")
    params = r.get("controller", "params", default={}, kind=dict) or {}

    map_path = _resolve(base_dir, r.get("map", kind=str))
    if not os.path.exists(map_path):
        r.error(f"map file not found: {map_path}", "map")

    path_file = None
    path_format = FormatKind.CSV
    path_closed = True
    if "path" in data:
        path_file = _resolve(base_dir, r.get("path", "file", kind=str))
        if not os.path.exists(path_file):
            r.error(f"path file not found: {path_file}", "path", "file")
        try:
            path_format = FormatKind(r.get("path", "format", default="csv", kind=str))
        except ValueError:
            r.error("path.format must be csv (a speed column is required)", "path", "format")
        if path_format is not FormatKind.CSV:
            r.error("path.format must be csv (a speed column is required)", "path", "format")
        path_closed = r.get("path", "closed", default=True, kind=bool)
    elif name != "gap_follower":
        r.error(f"controller {name} needs a 'path' section", "controller", "name")

    start = r.vector("start", size=3)
    vehicle = _dataclass_from(r, VehicleParams, "vehicle")
    sim = _dataclass_from(r, SimConfig, "sim")
    control_period = r.get("sim", "control_period", default=0.02, kind=float)
    max_time = r.get("sim", "max_time", default=300.0, kind=float)
    stall_time = r.get("sim", "stall_time", default=5.0, kind=float)
    if control_period < sim.dt:
        r.error("control_period must be at least dt", "sim", "control_period")

    try:
        zone = FinishZone(r.vector("monitor", "finish_zone", "a", size=2),
                          r.vector("monitor", "finish_zone", "b", size=2),
                          r.vector("monitor", "finish_zone", "direction", size=2, default=None))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        r.error(str(exc), "monitor", "finish_zone")
    reference = None
    if r.get("monitor", "reference", default=None) is not None:
        ref_path = _resolve(base_dir, r.get("monitor", "reference", "path", kind=str))
        if not os.path.exists(ref_path):
            r.error(f"reference file not found: {ref_path}", "monitor", "reference", "path")
        try:
            ref_format = FormatKind(r.get("monitor", "reference", "format", default="csv", kind=str))
        except ValueError:
            r.error("reference format must be one of tum, kitti, csv", "monitor", "reference", "format")
        reference = ReferenceConfig(ref_path, ref_format,
                                    r.get("monitor", "reference", "closed", default=True, kind=bool))
    target = r.get("monitor", "target_laps", default=None, kind=int)
    modules = r.get("monitor", "modules", default=None, kind=dict)
    try:
        monitor = MonitorConfig(
            finish_zone=zone,
            min_lap_time=r.get("monitor", "min_lap_time", default=3.0, kind=float),
            target_laps=target,
            reference=reference,
            flying_start=r.get("monitor", "flying_start", default=False, kind=bool),
            align=r.get("monitor", "align", default="rigid", kind=str),
            relation=r.get("monitor", "relation", default="translation", kind=str),
        )
    except ValueError as exc:
        r.error(str(exc), "monitor")
    if modules:
        monitor.modules.update({str(k): bool(v) for k, v in modules.items()})

    return ExperimentConfig(
        experiment_id=experiment_id,
        controller=name,
        controller_params=dict(params),
        map_path=map_path,
        start=Pose2D(*start),
        vehicle=vehicle,
        sim=sim,
        monitor=monitor,
        path_file=path_file,
        path_format=path_format,
        path_closed=path_closed,
        control_period=control_period,
        max_time=max_time,
        stall_time=stall_time,
        source=source,
        text=text,
        raw=data,
    )


def load_experiment_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_experiment_config(text, path, os.path.dirname(os.path.abspath(path)))
