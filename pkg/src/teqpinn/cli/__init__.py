"""Command-line interface: ``teqpinn {train,infer,oracle,compare,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from pydantic import ValidationError

from .. import exprgraph as eg
from ..oracle import SolverError
from ..train.checkpoint import CheckpointError
from ..train.optim import NumericalAbort
from .commands import ConfigError, cmd_compare, cmd_infer, cmd_oracle, cmd_plot, cmd_train
from .gridio import GridFormatError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="override training.seed")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker threads for collocation evaluation")
    p.add_argument("--out-dir", default=d, help="output directory")
    p.add_argument("--dump-graph", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="write the model graph as DOT")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="teqpinn", description="Quantum and classical PINN solvers for the heat equation.")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("config")
    _common(p, suppress=True)

    p = sub.add_parser("infer", help="evaluate a checkpoint on a grid")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="config to rebuild the model (default: the one stored in the checkpoint)")
    p.add_argument("--nx", type=int, help="points per spatial dimension")
    p.add_argument("--times", help="comma-separated evaluation times")
    p.add_argument("--reference", help="'analytic', 'rk45' or a solution CSV")
    _common(p, suppress=True)

    p = sub.add_parser("oracle", help="reference solution by the method of lines")
    p.add_argument("config")
    p.add_argument("--ppm", action="store_true", help="also write heatmaps")
    _common(p, suppress=True)

    p = sub.add_parser("compare", help="tabulate finished runs")
    p.add_argument("runs", nargs="+")
    _common(p, suppress=True)

    p = sub.add_parser("plot", help="render a solution CSV as a P6 heatmap")
    p.add_argument("csv")
    p.add_argument("output")
    p.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--t", type=float, help="time slice for 2D fields (default: last)")
    _common(p, suppress=True)
    return parser


def _run(args) -> int:
    if args.command == "train":
        res = cmd_train(args.config, args.out_dir, args.seed, args.threads, args.dump_graph)
        print(json.dumps({k: res["summary"][k] for k in ("final_loss", "l2_rel", "linf_rel", "param_count", "wall_time")}))
        if res["state"].status == "line-search-failed":
            print("warning: line search failed after the steepest-descent fallback", file=sys.stderr)
        return EXIT_OK
    if args.command == "infer":
        times = None if args.times is None else [float(v) for v in args.times.split(",") if v.strip()]
        res = cmd_infer(args.checkpoint, args.out_dir or ".", args.config, args.nx, times, args.reference)
        if "l2_rel" in res:
            print(json.dumps({"l2_rel": res["l2_rel"], "linf_rel": res["linf_rel"]}))
        return EXIT_OK
    if args.command == "oracle":
        res = cmd_oracle(args.config, args.out_dir, ["ppm"] if args.ppm else None)
        print(json.dumps({k: res[k] for k in ("nx", "accepted", "rejected", "rhs_evals")}))
        return EXIT_OK
    if args.command == "compare":
        res = cmd_compare(args.runs, args.out_dir)
        sys.stdout.write(res["text"])
        return EXIT_OK
    if args.command == "plot":
        lo, hi = args.range if args.range else (None, None)
        cmd_plot(args.csv, args.output, lo, hi, args.t)
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (ValidationError, ConfigError, CheckpointError, GridFormatError, json.JSONDecodeError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, SolverError, eg.NonFiniteError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
