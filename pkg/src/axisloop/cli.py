"""Command-line entry point: ``axisloop bench|offline|plotdata``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .bench import (
    ExperimentConfig,
    ResultsTable,
    export_plot_data,
    load_config,
    offline_perception,
    run_experiment,
    run_offline,
)
from .cloud import FilterParams
from .errors import ConfigError, NoValidWindow, ParseError
from .geometry import JointKind

OUT_DIR_ENV = "AXISLOOP_OUT_DIR"
EXIT_CONFIG = 2
EXIT_PARSE = 3


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup_logging(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("axisloop")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    return handler


def cmd_bench(args) -> int:
    config = load_config(args.config, args.seed) if args.config else ExperimentConfig(
        seed_base=args.seed or 0
    )
    out = _out_dir(args)
    handler = _setup_logging(out)
    try:
        table = run_experiment(config, jobs=args.jobs)
        table.write_csv(out / "results.csv")
        export_plot_data(table, out)
    finally:
        logging.getLogger("axisloop").removeHandler(handler)
        handler.close()
    for r in table.rows:
        print(f"{r.task.value:12s} {r.target:8g} {r.mode.value:12s} {r.success_rate:6.1f}%")
    return 0


def cmd_offline(args) -> int:
    out = _out_dir(args)
    handler = _setup_logging(out)
    try:
        frames = run_offline(
            args.frames, JointKind(args.kind), FilterParams(args.r, args.epsilon),
            out / "offline.csv",
            offline_perception(FilterParams(args.r, args.epsilon), args.margin, args.min_points),
        )
    finally:
        logging.getLogger("axisloop").removeHandler(handler)
        handler.close()
    for f in frames:
        if f.estimate is None:
            print(f"{f.frame:4d} {f.file}: {f.status}")
        else:
            a = f.estimate.axis
            print(f"{f.frame:4d} {f.file}: pivot={a.pivot.round(4).tolist()} dir={a.direction.round(4).tolist()}")
    return 0


def cmd_plotdata(args) -> int:
    if not args.results:
        raise ConfigError("plotdata needs a results.csv path")
    table = ResultsTable.read_csv(args.results)
    for path in export_plot_data(table, _out_dir(args), args.modes or None):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_DIR_ENV} or ./results)")
    common.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    common.add_argument("--seed", type=int, default=None, help="override seed_base")

    parser = argparse.ArgumentParser(prog="axisloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", parents=[common], help="run a batch experiment")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("offline", parents=[common], help="estimate the axis from PLY frames")
    p.add_argument("frames", help="directory of per-frame .ply files")
    p.add_argument("--kind", choices=[k.value for k in JointKind], required=True)
    p.add_argument("--r", type=float, default=FilterParams.real_world().r)
    p.add_argument("--epsilon", type=int, default=FilterParams.real_world().epsilon)
    p.add_argument("--margin", type=float, default=0.01, help="body box inflation in meters")
    p.add_argument("--min-points", type=int, default=30, help="smallest motion part counted as motion")
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("plotdata", parents=[common], help="split results.csv into plot series")
    p.add_argument("results", nargs="?", help="results.csv from a bench run")
    p.add_argument("--modes", nargs="*", help="modes to export (default: all present)")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NoValidWindow as exc:
        print(f"no estimate: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
