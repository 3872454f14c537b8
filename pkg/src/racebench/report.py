"""Post-race artifacts: summaries, lap tables, lap trends, error maps, comparisons.

Layout for one experiment::

    <out>/<experiment_id>/summary.txt     key = value, deterministic
    <out>/<experiment_id>/laps.csv
    <out>/<experiment_id>/lap_trend.csv
    <out>/<experiment_id>/error_map.csv   only with reference metrics (9 significant digits)
    <out>/<experiment_id>/resources.txt   timing, varies run to run
    <out>/<experiment_id>/config.yaml     snapshot of the input config

Summary and lap floats are written with ``repr`` so they read back bit for bit.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, fields

from .metrics import MetricStats, error_map_csv
from .monitor import LapRecord, RaceSummary, ResourceStats, lap_statistics

ABSENT = "--"


class ReportError(Exception):
    pass


class DuplicateExperimentId(ReportError):
    pass


class TooFewRecords(ReportError):
    """``compare`` needs at least two records."""


class IoFailure(ReportError):
    pass


class SummaryFormatError(ReportError):
    pass


@dataclass
class ExperimentRecord:
    experiment_id: str
    controller: str
    summary: RaceSummary | None
    laps: list[LapRecord] = field(default_factory=list)
    ape: MetricStats | None = None
    rpe: MetricStats | None = None
    error_map: list[tuple[float, float, float]] | None = None
    resources: ResourceStats | None = None
    config_text: str = ""
    status: str = "finished"

    def __post_init__(self):
        if not self.experiment_id or not self.experiment_id.strip():
            raise ValueError("experiment_id must be non-empty")
        if os.sep in self.experiment_id or self.experiment_id in (".", ".."):
            raise ValueError(f"experiment_id {self.experiment_id!r} is not a valid directory name")

    @property
    def has_metrics(self) -> bool:
        return self.ape is not None and self.rpe is not None

    @classmethod
    def from_result(cls, result, config) -> "ExperimentRecord":
        """Build from a :class:`racebench.race.RaceResult` and its config."""
        metrics = result.metrics
        return cls(
            experiment_id=config.experiment_id,
            controller=config.controller,
            summary=result.summary,
            laps=list(result.laps),
            ape=metrics.ape if metrics else None,
            rpe=metrics.rpe if metrics else None,
            error_map=metrics.error_map() if metrics else None,
            resources=result.resources,
            config_text=config.text,
            status=result.status,
        )

    @classmethod
    def from_lap_times(cls, experiment_id: str, times, controller: str = "") -> "ExperimentRecord":
        """Record from bare lap times; distances and speeds are left at zero."""
        laps = [LapRecord(i + 1, float(t), 0.0, 0.0, 0.0) for i, t in enumerate(times)]
        return cls(experiment_id, controller, lap_statistics(laps, controller, experiment_id), laps)


# -- serialization ------------------------------------------------------------

_SUMMARY_FLOATS = [f.name for f in fields(RaceSummary)
                   if f.name not in ("total_laps", "controller", "experiment_id")]
_STAT_NAMES = [f.name for f in fields(MetricStats)]
_RESOURCE_NAMES = [f.name for f in fields(ResourceStats)]


def _num(value) -> str:
    if value is None:
        return ABSENT
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _float(text: str) -> float | None:
    return None if text == ABSENT else float(text)


def summary_text(record: ExperimentRecord) -> str:
    lines = [
        f"experiment_id = {record.experiment_id}",
        f"controller = {record.controller}",
        f"status = {record.status}",
        f"total_laps = {record.summary.total_laps if record.summary else 0}",
    ]
    for name in _SUMMARY_FLOATS:
        lines.append(f"{name} = {_num(getattr(record.summary, name)) if record.summary else ABSENT}")
    lines.append(f"metrics = {'present' if record.has_metrics else 'absent'}")
    for prefix, stats in (("ape", record.ape), ("rpe", record.rpe)):
        lines += [f"{prefix}_{n} = {_num(getattr(stats, n) if stats else None)}" for n in _STAT_NAMES]
    return "\n".join(lines) + "\n"


def parse_key_values(text: str, source: str = "") -> dict[str, str]:
    out = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SummaryFormatError(f"{source}:{number}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def laps_csv(laps) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lap", "time", "distance", "avg_speed", "max_speed"])
    for lap in laps:
        w.writerow([lap.index, _num(lap.time), _num(lap.distance), _num(lap.avg_speed),
                    _num(lap.max_speed)])
    return buf.getvalue()


def lap_trend(laps) -> list[tuple[int, float, float]]:
    """``(lap, time, running average)`` rows."""
    rows, total = [], 0.0
    for k, lap in enumerate(laps, 1):
        total += lap.time
        rows.append((lap.index, lap.time, total / k))
    return rows


def lap_trend_csv(laps) -> str:
    rows = lap_trend(laps)
    overall = rows[-1][2] if rows else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lap", "time", "running_average", "average"])
    for lap, t, avg in rows:
        w.writerow([lap, _num(t), _num(avg), _num(overall)])
    return buf.getvalue()


def resources_text(stats: ResourceStats | None) -> str:
    if stats is None:
        return "samples = 0\n"
    return "".join(f"{n} = {_num(getattr(stats, n))}\n" for n in _RESOURCE_NAMES)


def write_experiment(record: ExperimentRecord, out_dir: str) -> dict[str, str]:
    """Write one experiment's files under ``out_dir/<experiment_id>``; returns name -> path."""
    target = os.path.join(out_dir, record.experiment_id)
    files = {
        "summary.txt": summary_text(record),
        "laps.csv": laps_csv(record.laps),
        "lap_trend.csv": lap_trend_csv(record.laps),
        "resources.txt": resources_text(record.resources),
    }
    if record.has_metrics and record.error_map is not None:
        files["error_map.csv"] = error_map_csv(record.error_map)
    if record.config_text:
        files["config.yaml"] = record.config_text
    written = {}
    try:
        os.makedirs(target, exist_ok=True)
        stale = os.path.join(target, "error_map.csv")
        if "error_map.csv" not in files and os.path.exists(stale):
            os.remove(stale)
        for name, text in files.items():
            path = os.path.join(target, name)
            with open(path, "w", newline="") as fh:
                fh.write(text)
            written[name] = path
    except OSError as exc:
        raise IoFailure(f"cannot write experiment files to {target}: {exc}") from exc
    return written


def _read(path: str) -> str:
    try:
        with open(path, newline="") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror}") from exc


def _stats(values: dict, prefix: str) -> MetricStats | None:
    keys = [f"{prefix}_{n}" for n in _STAT_NAMES]
    if not all(k in values and values[k] != ABSENT for k in keys):
        return None
    return MetricStats(**{n: float(values[k]) for n, k in zip(_STAT_NAMES, keys)})


def read_experiment(directory: str) -> ExperimentRecord:
    """Inverse of :func:`write_experiment`."""
    summary_path = os.path.join(directory, "summary.txt")
    values = parse_key_values(_read(summary_path), summary_path)
    try:
        experiment_id = values["experiment_id"]
        controller = values.get("controller", "")
        total = int(values.get("total_laps", "0"))
        summary = None
        if total > 0:
            summary = RaceSummary(total_laps=total, controller=controller,
                                  experiment_id=experiment_id,
                                  **{n: float(values[n]) for n in _SUMMARY_FLOATS})
    except (KeyError, ValueError) as exc:
        raise SummaryFormatError(f"{summary_path}: bad or missing field {exc}") from None

    laps = []
    laps_path = os.path.join(directory, "laps.csv")
    if os.path.exists(laps_path):
        for row in csv.DictReader(io.StringIO(_read(laps_path))):
            laps.append(LapRecord(int(row["lap"]), float(row["time"]), float(row["distance"]),
                                  float(row["avg_speed"]), float(row["max_speed"])))

    error_map = None
    map_path = os.path.join(directory, "error_map.csv")
    if os.path.exists(map_path):
        error_map = [(float(r["x"]), float(r["y"]), float(r["error"]))
                     for r in csv.DictReader(io.StringIO(_read(map_path)))]

    resources = None
    res_path = os.path.join(directory, "resources.txt")
    if os.path.exists(res_path):
        rv = parse_key_values(_read(res_path), res_path)
        if int(rv.get("samples", "0")) > 0:
            resources = ResourceStats(**{n: _float(rv[n]) for n in _RESOURCE_NAMES
                                         if n != "samples"}, samples=int(rv["samples"]))

    cfg_path = os.path.join(directory, "config.yaml")
    config_text = _read(cfg_path) if os.path.exists(cfg_path) else ""
    return ExperimentRecord(experiment_id, controller, summary, laps,
                            _stats(values, "ape"), _stats(values, "rpe"), error_map,
                            resources, config_text, values.get("status", "finished"))


# -- comparison ---------------------------------------------------------------

COMPARISON_ROWS = (
    ("best_lap", "Best lap (s)"),
    ("avg_lap", "Avg lap (s)"),
    ("consistency", "Consistency"),
    ("avg_speed", "Avg speed (m/s)"),
    ("control_latency", "Control latency (s)"),
    ("mean_compute", "Mean compute (s)"),
    ("ape_mean", "APE mean (m)"),
    ("rpe_mean", "RPE mean (m)"),
)


def _row_values(record: ExperimentRecord) -> dict[str, float | None]:
    s, res = record.summary, record.resources
    return {
        "best_lap": s.best_lap if s else None,
        "avg_lap": s.average_lap if s else None,
        "consistency": s.consistency_score if s else None,
        "avg_speed": s.avg_speed if s else None,
        "control_latency": res.mean_latency if res else None,
        "mean_compute": res.mean_compute if res else None,
        "ape_mean": record.ape.mean if record.ape else None,
        "rpe_mean": record.rpe.mean if record.rpe else None,
    }


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    cells: tuple[tuple[float | None, ...], ...]

    def __post_init__(self):
        if len(self.cells) != len(self.rows) or any(len(r) != len(self.columns) for r in self.cells):
            raise ValueError("comparison table must be rectangular")

    def cell(self, row: str, column: str) -> float | None:
        return self.cells[self.rows.index(row)][self.columns.index(column)]

    def column(self, column: str) -> tuple[float | None, ...]:
        j = self.columns.index(column)
        return tuple(r[j] for r in self.cells)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", *self.columns])
        for name, row in zip(self.rows, self.cells):
            w.writerow([name, *(_num(v) for v in row)])
        return buf.getvalue()

    def render(self) -> str:
        labels = dict(COMPARISON_ROWS)
        head = ["Metric", *self.columns]
        body = [[labels.get(name, name), *(ABSENT if v is None else f"{v:.4g}" for v in row)]
                for name, row in zip(self.rows, self.cells)]
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        fmt_row = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                      for i, (c, w) in enumerate(zip(r, widths)))
        return "\n".join([fmt_row(head), *(fmt_row(r) for r in body)]) + "\n"


def compare(records) -> ComparisonTable:
    records = list(records)
    if len(records) < 2:
        raise TooFewRecords(f"compare needs at least 2 experiments, got {len(records)}")
    seen = set()
    for r in records:
        if r.experiment_id in seen:
            raise DuplicateExperimentId(f"experiment id {r.experiment_id!r} appears more than once")
        seen.add(r.experiment_id)
    per_column = [_row_values(r) for r in records]
    names = tuple(name for name, _ in COMPARISON_ROWS)
    cells = tuple(tuple(_clean(col[name]) for col in per_column) for name in names)
    return ComparisonTable(names, tuple(r.experiment_id for r in records), cells)


def _clean(v):
    return None if v is None or not math.isfinite(v) else float(v)


def write_comparison(table: ComparisonTable, path: str) -> str:
    try:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(table.to_csv())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_comparison(path: str) -> ComparisonTable:
    rows = list(csv.reader(io.StringIO(_read(path))))
    columns = tuple(rows[0][1:])
    names = tuple(r[0] for r in rows[1:])
    cells = tuple(tuple(_float(c) for c in r[1:]) for r in rows[1:])
    return ComparisonTable(names, columns, cells)
