"""Command line: ``racebench run | eval | laps | compare``.

Exit codes: 0 success, 1 usage/config/parse error, 2 race or lap count not completed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .config import ConfigError, load_experiment_config
from .metrics import ALIGN_MODES, MetricsError, error_map_csv, evaluate, project_onto_reference
from .monitor import EmptyLaps, FinishZone, MonitorConfig, NonMonotonicTime, lap_statistics, replay, stamped_poses
from .report import (ExperimentRecord, ReportError, compare,
                     read_experiment, write_comparison, write_experiment)
from .tracks import CONFIG_NAMES, bundled_config
from .trajio import FormatKind, TrajectoryFormatError, load

OK, FAILED, NOT_COMPLETED = 0, 1, 2

RELATION_FLAGS = {"trans": "translation", "translation": "translation", "yaw": "yaw"}
FORMATS = [k.value for k in FormatKind]

log = logging.getLogger("racebench")


def _err(message: str) -> None:
    print(f"racebench: error: {message}", file=sys.stderr)


def _resolve_config(name: str) -> str:
    if not os.path.exists(name) and name in CONFIG_NAMES:
        return bundled_config(name)
    return name


def cmd_run(args) -> int:
    from .race import run_race

    try:
        config = load_experiment_config(_resolve_config(args.config))
    except ConfigError as exc:
        _err(str(exc))
        return FAILED
    try:
        result = run_race(config)
    except (ValueError, OSError) as exc:
        _err(f"{config.source}: {exc}")
        return FAILED
    record = ExperimentRecord.from_result(result, config)
    try:
        written = write_experiment(record, args.output)
        if args.figures:
            from .plots import save_experiment_figures

            save_experiment_figures(record, args.output)
    except ReportError as exc:
        _err(str(exc))
        return FAILED

    print(f"experiment {config.experiment_id}: {result.status} after {result.sim_time:.2f} s "
          f"simulated, {len(result.laps)} laps")
    _print_laps(result.laps)
    if result.summary:
        _print_summary(result.summary)
    if result.metrics:
        print(f"APE mean {result.metrics.ape.mean:.6f}  RPE mean {result.metrics.rpe.mean:.6f}")
    print(f"outputs: {os.path.dirname(written['summary.txt'])}")
    return OK if result.completed else NOT_COMPLETED


def _print_laps(laps) -> None:
    if not laps:
        return
    print(f"{'lap':>4}  {'time':>10}  {'distance':>10}  {'avg_speed':>10}")
    for lap in laps:
        print(f"{lap.index:>4}  {lap.time:>10.3f}  {lap.distance:>10.3f}  {lap.avg_speed:>10.3f}")


def _print_summary(s) -> None:
    print(f"laps {s.total_laps}  best {s.best_lap:.3f}  average {s.average_lap:.3f}  "
          f"worst {s.worst_lap:.3f}  std {s.lap_std:.3f}  consistency {s.consistency_score:.3f}")


def _print_stats(name: str, stats) -> None:
    print(f"{name}: " + "  ".join(f"{k} {v:.6f}" for k, v in stats.as_dict().items()))


def cmd_eval(args) -> int:
    loaded = []
    for path, kind in ((args.est, args.est_format), (args.ref, args.ref_format)):
        try:
            loaded.append(load(path, kind))
        except (TrajectoryFormatError, OSError) as exc:
            _err(f"{path}: {exc}")
            return FAILED
    est, ref = loaded
    if not ref.stamped and est.stamped and len(ref) != len(est):
        ref = project_onto_reference(est, ref, closed=args.closed)
    try:
        bundle = evaluate(ref, est, args.align, RELATION_FLAGS[args.relation], args.delta,
                          args.max_t_diff)
    except (MetricsError, ValueError) as exc:
        _err(str(exc))
        return FAILED
    _print_stats("APE", bundle.ape)
    _print_stats("RPE", bundle.rpe)
    if args.output:
        try:
            with open(args.output, "w", newline="") as fh:
                fh.write(error_map_csv(bundle.error_map()))
        except OSError as exc:
            _err(f"cannot write {args.output}: {exc.strerror}")
            return FAILED
        print(f"error map: {args.output}")
    return OK


def cmd_laps(args) -> int:
    try:
        zone = FinishZone.parse(args.zone)
        config = MonitorConfig(zone, min_lap_time=args.min_lap_time, flying_start=args.flying_start)
    except ValueError as exc:
        _err(f"bad zone: {exc}")
        return FAILED
    try:
        traj = load(args.log, args.format)
    except (TrajectoryFormatError, OSError) as exc:
        _err(str(exc))
        return FAILED
    if not traj.stamped:
        _err(f"{args.log}: lap timing needs timestamps")
        return FAILED
    try:
        monitor, _ = replay(stamped_poses(traj), config)
    except NonMonotonicTime as exc:
        _err(str(exc))
        return FAILED
    _print_laps(monitor.laps)
    try:
        summary = lap_statistics(monitor.laps)
    except EmptyLaps as exc:
        print(f"0 laps: {exc}")
        return NOT_COMPLETED
    _print_summary(summary)
    return OK


def cmd_compare(args) -> int:
    if len(args.dirs) < 2:
        _err("compare needs at least 2 experiment directories")
        return FAILED
    try:
        records = [read_experiment(d) for d in args.dirs]
        table = compare(records)
    except ReportError as exc:
        _err(str(exc))
        return FAILED
    out = args.output or os.path.join(os.path.dirname(os.path.abspath(args.dirs[0])),
                                      "comparison.csv")
    try:
        write_comparison(table, out)
        if args.figures:
            from .plots import comparison_figure, save

            save(comparison_figure(table), os.path.splitext(out)[0] + ".png")
    except ReportError as exc:
        _err(str(exc))
        return FAILED
    print(table.render(), end="")
    print(f"comparison: {out}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="racebench", description="Desk-scale racing benchmark.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a race from a config file")
    run.add_argument("-c", "--config", required=True,
                     help=f"config path or bundled name ({', '.join(CONFIG_NAMES)})")
    run.add_argument("-o", "--output", default="results")
    run.add_argument("--figures", action="store_true", help="also render PNG figures")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="APE/RPE of an estimated trajectory")
    ev.add_argument("--est", required=True)
    ev.add_argument("--ref", required=True)
    ev.add_argument("--est-format", choices=FORMATS)
    ev.add_argument("--ref-format", choices=FORMATS)
    ev.add_argument("--align", choices=ALIGN_MODES, default="rigid")
    ev.add_argument("--relation", choices=sorted(RELATION_FLAGS), default="trans")
    ev.add_argument("--delta", type=int, default=1)
    ev.add_argument("--max-t-diff", type=float, default=0.01)
    ev.add_argument("--open", dest="closed", action="store_false",
                    help="treat an untimed reference line as open")
    ev.add_argument("-o", "--output", default="error_map.csv",
                    help="error-map CSV path; empty string skips it")
    ev.set_defaults(func=cmd_eval)

    laps = sub.add_parser("laps", help="lap statistics from a pose log")
    laps.add_argument("--log", required=True)
    laps.add_argument("--format", choices=FORMATS)
    laps.add_argument("--zone", required=True, help="ax,ay,bx,by[,dx,dy]")
    laps.add_argument("--min-lap-time", type=float, default=3.0)
    laps.add_argument("--flying-start", action="store_true")
    laps.set_defaults(func=cmd_laps)

    cmp_ = sub.add_parser("compare", help="comparison table across experiment directories")
    cmp_.add_argument("dirs", nargs="*")
    cmp_.add_argument("-o", "--output", help="comparison CSV path")
    cmp_.add_argument("--figures", action="store_true")
    cmp_.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return FAILED if exc.code else OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
